// irr: benchmark driver.
//
//   irr bench  --data PATH --label-col K --corruption independent --target-fraction 0.62 --out report.json
//   irr sweep  --data PATH --label-col K --fractions 0.5,0.6,0.7 --tsv sweep.tsv
//   irr digits --data data/optdigits.csv --digit 3 --trials 2

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "irr/irr.hpp"

namespace {

struct CommonArgs {
  std::string data;
  std::string label_col = "0";
  std::vector<std::string> skip_cols;
  bool header = false;
  std::size_t train_size = 1000;
  std::size_t trials = 5;
  std::string methods = "zero,mean,ind,irr,nocorr";
  std::uint64_t seed = 0;
  std::string out;
  std::string tsv;
  std::string solver_json;
  bool full_grid = false;
  bool report_bounds = false;
  bool verbose = false;
  int grid_min = -12;
  int grid_max = 10;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--data", a.data, "CSV file (\"?\" or empty cells are missing)")->required();
  cmd->add_option("--label-col", a.label_col, "label column: zero-based index or header name");
  cmd->add_option("--skip-cols", a.skip_cols, "columns to drop (index or name)")->delimiter(',');
  cmd->add_flag("--header", a.header, "first line is a header");
  cmd->add_option("--train-size", a.train_size, "training rows per trial");
  cmd->add_option("--trials", a.trials, "number of random splits");
  cmd->add_option("--methods", a.methods, "comma list of zero,mean,ind,irr,nocorr");
  cmd->add_option("--seed", a.seed, "master seed");
  cmd->add_option("--out", a.out, "JSON report path");
  cmd->add_option("--tsv", a.tsv, "TSV table path");
  cmd->add_option("--solver", a.solver_json, "solver config JSON file");
  cmd->add_option("--grid-min", a.grid_min, "smallest log2 exponent for lambda and gamma");
  cmd->add_option("--grid-max", a.grid_max, "largest log2 exponent for lambda and gamma");
  cmd->add_flag("--full-grid", a.full_grid, "search every (lambda, gamma) pair for IRR");
  cmd->add_flag("--report-bounds", a.report_bounds, "add the complexity bound at the chosen IRR point");
  cmd->add_flag("-v,--verbose", a.verbose, "progress on stderr");
}

irr::ColumnRef column_ref(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) return std::size_t{std::stoul(s)};
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

irr::ExperimentSpec make_spec(const CommonArgs& a) {
  irr::ExperimentSpec spec;
  spec.dataset_path = a.data;
  spec.csv.label_column = column_ref(a.label_col);
  spec.csv.has_header = a.header;
  for (const auto& c : a.skip_cols) spec.csv.skip_columns.push_back(column_ref(c));
  spec.train_size = a.train_size;
  spec.trials = a.trials;
  spec.methods.clear();
  for (const auto& m : split_list(a.methods)) spec.methods.push_back(irr::method_from_string(m));
  spec.master_seed = a.seed;
  spec.full_grid = a.full_grid;
  spec.report_bounds = a.report_bounds;
  spec.verbose = a.verbose;
  irr::require(a.grid_min <= a.grid_max, "--grid-min exceeds --grid-max");
  spec.lambda_grid.clear();
  for (int e = a.grid_min; e <= a.grid_max; ++e) spec.lambda_grid.push_back(e);
  spec.gamma_grid = spec.lambda_grid;
  if (!a.solver_json.empty()) spec.solver = irr::read_json_file(a.solver_json).get<irr::SolverConfig>();
  return spec;
}

void emit(const irr::ExperimentReport& rep, const CommonArgs& a) {
  if (!a.out.empty()) irr::write_json_file(a.out, rep);
  if (!a.tsv.empty()) irr::write_text_file(a.tsv, irr::write_report_tsv, rep);
  irr::write_report_tsv(std::cout, rep);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  if (rep.bounds)
    std::cout << "rademacher_bound\t" << rep.bounds->rademacher << "\ngeneralization_gap\t"
              << rep.bounds->generalization_gap << '\n';
  std::cout << "runtime_seconds\t" << rep.runtime_seconds << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Imputed ridge regression benchmarks"};
  app.require_subcommand(1);

  CommonArgs bench_args;
  std::string corruption = "independent";
  double beta = 0.5;
  double target = 0.0;
  auto* bench = app.add_subcommand("bench", "run the protocol on one dataset");
  add_common(bench, bench_args);
  bench->add_option("--corruption", corruption, "independent|dependent|column|native")
      ->check(CLI::IsMember({"independent", "dependent", "column", "native"}));
  bench->add_option("--beta", beta, "corruption strength when no target fraction is given");
  bench->add_option("--target-fraction", target, "calibrate beta to this fraction of features remaining");

  CommonArgs sweep_args;
  std::string sweep_corruption = "independent";
  std::vector<double> fractions;
  auto* sweep = app.add_subcommand("sweep", "RMSE across fractions of features remaining");
  add_common(sweep, sweep_args);
  sweep->add_option("--corruption", sweep_corruption, "independent|dependent")
      ->check(CLI::IsMember({"independent", "dependent"}));
  sweep->add_option("--fractions", fractions, "comma list in (0, 1]")->delimiter(',')->required();

  CommonArgs digit_args;
  digit_args.label_col = "64";
  int digit = 3;
  auto* digits = app.add_subcommand("digits", "one-vs-all on 8x8 digit images with central columns removed");
  add_common(digits, digit_args);
  digits->add_option("--digit", digit, "positive class")->check(CLI::Range(0, 9));

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      auto spec = make_spec(bench_args);
      if (corruption == "native") {
        spec.corruption.reset();
      } else {
        irr::CorruptionSpec cs;
        cs.kind = irr::corruption_kind_from_string(corruption);
        cs.beta = beta;
        if (cs.kind == irr::CorruptionKind::ColumnBlock) cs = irr::central_column_corruption();
        spec.corruption = cs;
        if (target > 0.0) spec.target_fraction = target;
      }
      emit(irr::run_experiment(spec), bench_args);
    } else if (sweep->parsed()) {
      auto spec = make_spec(sweep_args);
      irr::CorruptionSpec cs;
      cs.kind = irr::corruption_kind_from_string(sweep_corruption);
      spec.corruption = cs;
      const auto rows = irr::sweep_fraction(spec, fractions);
      if (!sweep_args.tsv.empty()) irr::write_text_file(sweep_args.tsv, irr::write_sweep_tsv, rows);
      irr::write_sweep_tsv(std::cout, rows);
    } else if (digits->parsed()) {
      emit(irr::run_onevsall(make_spec(digit_args), digit), digit_args);
    }
  } catch (const irr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
