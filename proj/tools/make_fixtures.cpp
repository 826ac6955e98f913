// Regenerates the files under data/: the synthetic survey corpus and one
// TreeBagging experiment run on a DGP fitted to it.
#include <filesystem>
#include <iostream>

#include "cbx/log_io.hpp"
#include "cbx/sim.hpp"
#include "cbx/survey.hpp"

using namespace cbx;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "data";
  fs::create_directories(dir);

  const ObservationLog corpus = generate_corpus(3000, 7);
  write_log(corpus, dir / "corpus.csv");

  ExperimentConfig c;
  c.total_periods = 3000;
  c.batch_size = 150;
  c.bandit.batch_size = 150;
  c.learning_fraction = 0.5;
  c.bandit.algorithm = Algorithm::TreeBagging;
  c.bandit.ensemble_size = 20;
  c.bandit.ensemble_depth = 1;
  c.seed = 11;
  const SimEnvironment env = build_dgp(corpus, {10.0}, c.seed, 0);
  const auto eval = draw_eval_contexts(env.pool_size(), c.eval_contexts, c.seed);
  ObservationLog log;
  run_replicate(env, c, 0, eval, &log);
  write_log(log, dir / "experiment_log.csv");
  write_log(log.learning_phase(), dir / "learning_log.csv");
  std::cout << "wrote " << corpus.size() << " corpus rows, " << log.size() << " experiment rows ("
            << log.learning_phase().size() << " learning)\n";
  return 0;
}
