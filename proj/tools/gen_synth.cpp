// Generates a planted-structure benchmark graph as a triplet TSV. Used for
// demos and the synthetic end-to-end pipeline.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "gen/error.hpp"
#include "gen/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"planted-structure synthetic graph generator"};
  gen::SynthConfig cfg;
  std::string out = "synthetic.tsv";
  app.add_option("--entities", cfg.entities, "entity count [300]");
  app.add_option("--relations", cfg.relations, "relation count [8]");
  app.add_option("--clusters", cfg.clusters, "latent cluster count [8]");
  app.add_option("--edge-prob", cfg.edge_prob,
                 "probability of each compatible pair [0.75]");
  app.add_option("--seed", cfg.seed, "generator seed [7]");
  app.add_option("--out", out, "output TSV path [synthetic.tsv]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto rows = gen::synth_rows(cfg);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) gen::fail(gen::ErrorKind::Io, "cannot write " + out);
    for (const auto& r : rows)
      f << r.head << '\t' << r.rel << '\t' << r.tail << '\n';
    std::cout << out << ": " << rows.size() << " triplets over "
              << cfg.entities << " entities, " << cfg.relations
              << " relations\n";
    return 0;
  } catch (const gen::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == gen::ErrorKind::Config ? 2 : 1;
  }
}
