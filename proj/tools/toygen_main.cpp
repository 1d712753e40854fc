// Generate the deterministic synthetic corpus plus runnable config files.
#include <cstdio>
#include <string>

#include "promalign/toy_corpus.hpp"

int main(int argc, char** argv) {
  if (argc < 2 || argc > 3) {
    std::fprintf(stderr, "usage: promalign-toygen <dir> [seed]\n");
    return 2;
  }
  std::uint64_t seed = argc == 3 ? std::stoull(argv[2]) : 1;
  try {
    promalign::ToyCorpus tc = promalign::generate_toy_corpus(argv[1], seed);
    std::printf("toy corpus in %s (seed %llu)\n", tc.dir.c_str(),
                (unsigned long long)seed);
    std::printf("  64 image-caption pairs, vocab %zu, %zu nouns, %zu relations\n",
                tc.vocab_size, tc.nouns.size(), tc.relations.size());
    std::printf("  sequence labeling: %s (+dev), relation extraction: %s (+dev)\n",
                tc.mner_train.c_str(), tc.mre_train.c_str());
    std::printf("  configs: config_gen_pseudo_labels.json config_pretrain.json "
                "config_ner.json config_re.json config_eval_ner.json config_eval_re.json\n");
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
