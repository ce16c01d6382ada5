#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dropdist/constructions.hpp"
#include "dropdist/distill.hpp"
#include "dropdist/graph.hpp"
#include "dropdist/model.hpp"

namespace dropdist {

struct DatasetSpec {
  std::string kind = "sbm";  // sbm | multilabel_sbm | planetoid | prop1
  std::string name;          // label used in tables; defaults per kind
  SbmParams sbm;
  double extra_label_p = 0.2;
  std::string content_path;
  std::string cites_path;
  double prop1_p = 0.9;
  double prop1_eps = 0.1;
  std::size_t prop1_roots = 50;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  SplitFractions split;
  std::uint64_t split_seed = 0;
  ModelConfig model;    // axiom-study model (in/out dims filled from data)
  ModelConfig teacher;  // distillation teacher
  ModelConfig student;  // distillation student
  TrainConfig train;
  GridSpec grid;
  std::vector<Method> methods{Method::student, Method::student_dropedge, Method::kd, Method::kd_dropedge,
                              Method::dropdistillation};
  std::size_t seeds = 5;
  std::vector<std::uint64_t> seed_list;  // overrides `seeds` when non-empty
  std::uint64_t teacher_seed = 1000;
  std::string teacher_checkpoint;        // load instead of training when set
  double min_teacher_val = 0.0;
  std::size_t influence_sample = 0;      // 0: every test node
  std::string out_dir = "results";
  std::string format = "csv";

  std::vector<std::uint64_t> seed_values() const;
};

/// Desk-scale defaults: 300-node 3-block SBM, GAT models.
ExperimentConfig default_config();
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Dataset {
  std::string name;
  Graph graph;  // masks always set
  std::optional<Prop1Construction> prop1;
};

Dataset load_dataset(const ExperimentConfig& config);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;  // 0 renders as "-"
};

Summary summarize(const std::vector<double>& values);

struct PairMetrics {
  std::uint64_t seed_a = 0, seed_b = 0;
  double churn = 0.0;
  double id = 0.0;
  std::optional<double> corr_id_s;
  std::optional<double> corr_h_s;
};

struct AxiomResult {
  std::string dataset;
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;  // test accuracy / F1 per seed
  std::vector<PairMetrics> pairs;
  Summary score, churn, id, corr_id_s, corr_h_s;
};

/// Trains one model per seed and evaluates every unordered pair on the test
/// nodes. On the prop1 dataset the fixed analytic pair is evaluated instead.
AxiomResult run_axiom_study(const ExperimentConfig& config, const Dataset& data);

struct MethodResult {
  Method method = Method::student;
  TrainConfig best_cell;
  std::size_t cells_evaluated = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<TrainResult> runs;
  std::vector<double> scores;  // test score per seed
  std::vector<double> churns;  // teacher-student churn on test nodes per seed
  Summary score, churn;
};

struct DistillResult {
  std::string dataset;
  ModelParams teacher;
  std::string teacher_hash;
  std::size_t teacher_params = 0;
  std::size_t student_params = 0;
  double teacher_val = 0.0;
  double teacher_test = 0.0;
  std::vector<MethodResult> methods;
};

/// Trains (or loads) the teacher once, then grid-searches every method over
/// the configured seeds against that frozen teacher.
DistillResult run_distill_benchmark(const ExperimentConfig& config, const Dataset& data);

struct Prop1Verification {
  double churn = 0.0;
  double id = 0.0;
  double closed_form = 0.0;
  bool pass = false;
};

/// Requires p > 3 eps.
Prop1Verification verify_prop1(double p, double eps, std::size_t num_roots);

struct Prop2Verification {
  double lhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs = 0.0;
  double base_term = 0.0;
  double gradient_term = 0.0;
  double diff_in_stderr_units = 0.0;
  bool pass = false;
};

/// Monte Carlo check of the expected squared output gap under zero-mean
/// edge perturbations against base gap + gradient contraction term. Both
/// models must be one-layer GCN-style linear models (no attention).
Prop2Verification verify_prop2(const Graph& g, const ModelParams& teacher, const ModelParams& student,
                               std::size_t samples, double p, std::uint64_t seed);

/// Random connected `n`-node graph with a random linear model pair.
Prop2Verification verify_prop2_random(std::size_t n, std::size_t samples, double p, std::uint64_t seed);

struct GradcheckCase {
  std::string name;
  double max_rel_error = 0.0;
};

/// Gradient checks of random 3-layer GCN and GAT models on random 10-30
/// node graphs, for every parameter tensor and the input features.
std::vector<GradcheckCase> run_gradcheck(std::uint64_t seed, double h = 1e-5);

// ---- tables ----

enum class TableFormat { csv, markdown };
TableFormat parse_format(const std::string& s);

/// "mean±std" with `decimals` digits after scaling by `factor`; "-" when empty.
std::string format_cell(const Summary& s, int decimals, double factor = 1.0);
/// Inverse of format_cell: returns nullopt for "-".
std::optional<std::pair<double, double>> parse_cell(const std::string& cell);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string render(const Table& t, TableFormat f);
Table parse_csv(const std::string& text);

Table axiom_table(const std::vector<AxiomResult>& results);
Table distill_accuracy_table(const DistillResult& r);
Table distill_churn_table(const DistillResult& r);

/// Writes tables (and raw per-run records) under `out_dir`. Returns the
/// written table paths.
std::vector<std::filesystem::path> write_axiom_outputs(const AxiomResult& r, const std::filesystem::path& out_dir,
                                                       TableFormat f);
std::vector<std::filesystem::path> write_distill_outputs(const DistillResult& r, const std::filesystem::path& out_dir,
                                                         TableFormat f);

}  // namespace dropdist
