// Command-line entry point for the churn/influence study, the distillation
// benchmark and the analytic verifiers.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dropdist/harness.hpp"

using namespace dropdist;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::size_t> seeds;
  std::string format;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? default_config() : load_config(g.config);
  if (!g.out.empty()) c.out_dir = g.out;
  if (g.seeds) {
    c.seeds = *g.seeds;
    c.seed_list.clear();
  }
  if (!g.format.empty()) c.format = g.format;
  parse_format(c.format);
  return c;
}

int cmd_axioms(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const Dataset data = load_dataset(c);
  const AxiomResult r = run_axiom_study(c, data);
  const auto fmt = parse_format(c.format);
  for (const auto& p : write_axiom_outputs(r, c.out_dir, fmt)) std::cerr << "wrote " << p.string() << '\n';
  std::cout << render(axiom_table({r}), TableFormat::markdown);
  return 0;
}

int cmd_distill(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const Dataset data = load_dataset(c);
  const DistillResult r = run_distill_benchmark(c, data);
  std::cerr << "teacher " << r.teacher_hash << ": " << r.teacher_params << " params, val " << r.teacher_val
            << "; student " << r.student_params << " params\n";
  const auto fmt = parse_format(c.format);
  for (const auto& p : write_distill_outputs(r, c.out_dir, fmt)) std::cerr << "wrote " << p.string() << '\n';
  std::cout << render(distill_accuracy_table(r), TableFormat::markdown) << '\n'
            << render(distill_churn_table(r), TableFormat::markdown);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction churn, influence difference and DropDistillation on graph neural networks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seeds", g.seeds, "number of seeds (overrides config)")->check(CLI::Range(1, 1000));
  app.add_option("--format", g.format, "table format")->check(CLI::IsMember({"csv", "markdown"}));

  // let global flags appear after the subcommand name too
  app.fallthrough();

  auto* axioms = app.add_subcommand("axioms", "train identically configured models and tabulate churn/ID");
  auto* distill = app.add_subcommand("distill", "teacher/student benchmark over all methods");

  auto* p1 = app.add_subcommand("verify-prop1", "zero churn with large influence difference counterexample");
  double p1_p = 0.9, p1_eps = 0.1;
  std::size_t p1_roots = 50;
  p1->add_option("--p", p1_p, "edge weight of the dominant neighbor");
  p1->add_option("--eps", p1_eps, "edge weight of the weak neighbor");
  p1->add_option("--roots", p1_roots, "number of root nodes")->check(CLI::Range(1, 1000000));

  auto* p2 = app.add_subcommand("verify-prop2", "Monte Carlo check of the squared-gap expansion");
  std::size_t p2_samples = 100000, p2_nodes = 5;
  double p2_p = 0.2;
  std::uint64_t p2_seed = 0;
  p2->add_option("--samples", p2_samples, "Monte Carlo samples")->check(CLI::Range(10000, 100000000));
  p2->add_option("--p", p2_p, "edge drop probability");
  p2->add_option("--nodes", p2_nodes, "graph size")->check(CLI::Range(2, 200));
  p2->add_option("--seed", p2_seed, "random seed");

  auto* gc = app.add_subcommand("gradcheck", "autodiff versus central finite differences");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (axioms->parsed()) return cmd_axioms(g);
    if (distill->parsed()) return cmd_distill(g);
    if (p1->parsed()) {
      const auto v = verify_prop1(p1_p, p1_eps, p1_roots);
      std::printf("churn=%.17g id=%.17g closed_form=%.17g %s\n", v.churn, v.id, v.closed_form, v.pass ? "PASS" : "FAIL");
      return v.pass ? 0 : 1;
    }
    if (p2->parsed()) {
      const auto v = verify_prop2_random(p2_nodes, p2_samples, p2_p, p2_seed);
      std::printf("lhs=%.10g stderr=%.3g rhs=%.10g (base=%.10g gradient=%.10g) diff=%.3f stderr units %s\n", v.lhs,
                  v.lhs_stderr, v.rhs, v.base_term, v.gradient_term, v.diff_in_stderr_units, v.pass ? "PASS" : "FAIL");
      return v.pass ? 0 : 1;
    }
    if (gc->parsed()) {
      bool ok = true;
      for (const auto& c : run_gradcheck(gc_seed)) {
        const bool pass = c.max_rel_error < 1e-4;
        ok = ok && pass;
        std::printf("%-16s max_rel_error=%.3e %s\n", c.name.c_str(), c.max_rel_error, pass ? "PASS" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
