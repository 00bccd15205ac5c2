#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>
#include "biaslab/corpus.hpp"
#include "biaslab/lm.hpp"
#include "biaslab/mixture.hpp"
#include "biaslab/rng.hpp"

using namespace biaslab;

int main(int argc, char** argv) {
    double lr = argc > 1 ? atof(argv[1]) : 0.3;
    int epochs = argc > 2 ? atoi(argv[2]) : 10;
    int batch = argc > 3 ? atoi(argv[3]) : 16;

    auto suite = make_synthetic_suite(30, 5, 11);
    std::vector<std::string> extras;
    for (int i = 0; i < 72; ++i) { char b[16]; snprintf(b, sizeof b, "<unused%02d>", i); extras.push_back(b); }
    for (auto w : {"visit","try","best","deals","shop","today","more","at"}) extras.push_back(w);
    extras.push_back("GIBBLE");
    auto vocab = build_vocab(suite.tasks, extras);
    std::printf("vocab=%d\n", vocab.size());

    std::vector<const TaskSpec*> teacher_tasks;
    for (int i = 0; i < 20; ++i) teacher_tasks.push_back(&suite.tasks[i]);
    auto ds = sample_mixture(Mixture::uniform(teacher_tasks), 2000, 42);

    LMConfig tc;
    tc.vocab_size = vocab.size(); tc.context_len = 64; tc.embed_dim = 64; tc.depth = 2;
    tc.learning_rate = lr; tc.epochs = epochs; tc.batch_size = batch; tc.seed = 5;
    auto model = LanguageModel::fresh(tc);
    auto t0 = std::chrono::steady_clock::now();
    auto trace = train(model, ds, vocab);
    auto t1 = std::chrono::steady_clock::now();
    std::printf("lr=%.2f epochs=%d batch=%d: first=%.3f last=%.3f  (%.1fs)\n",
                lr, epochs, batch, trace.epoch_mean_loss.front(), trace.epoch_mean_loss.back(),
                std::chrono::duration<double>(t1-t0).count());

    // per-family held-out exact match
    std::map<std::string, std::pair<int,int>> fam;
    DecodeConfig dc; dc.max_tokens = 12;
    Rng qr(777);
    for (int i = 0; i < 20; ++i) {
        const auto& t = suite.tasks[i % 20];
        for (int j = 0; j < 5; ++j) {
            auto q = t.sample_query(qr);
            auto prompt = vocab.tokenize(q);
            prompt.push_back(vocab.sep());
            auto out = decode(model, prompt, dc, vocab.eos());
            bool ok = vocab.detokenize(out) == t.respond(q);
            fam[t.family].first += ok; fam[t.family].second += 1;
        }
    }
    for (auto& [k,v] : fam) std::printf("  %s: %d/%d\n", k.c_str(), v.first, v.second);
    return 0;
}
