// quick gradcheck after the rel-bias change
#include <cmath>
#include <cstdio>
#include <vector>
#include "biaslab/lm.hpp"
#include "biaslab/rng.hpp"
using namespace biaslab;
int main() {
    LMConfig cfg;
    cfg.vocab_size = 12; cfg.context_len = 10; cfg.embed_dim = 8; cfg.depth = 2; cfg.seed = 3;
    auto m = LanguageModel::fresh(cfg);
    Rng r(99);
    for (auto& p : m.params) p += r.normal(0.0, 0.05);
    TrainExample ex; ex.input = {4,5,3,6,7,8}; ex.targets = {6,7,8,1}; ex.first_target_row = 2;
    std::vector<double> grad(m.params.size(), 0.0);
    example_loss(m, ex, &grad, nullptr);
    Rng pick(7); int bad=0;
    for (int it = 0; it < 300; ++it) {
        std::size_t i = pick.below(m.params.size());
        double h=1e-5, o=m.params[i];
        m.params[i]=o+h; double Lp=example_loss(m, ex, nullptr, nullptr);
        m.params[i]=o-h; double Lm=example_loss(m, ex, nullptr, nullptr);
        m.params[i]=o;
        double fd=(Lp-Lm)/(2*h);
        double rel=std::fabs(fd-grad[i])/std::max(1e-8, std::fabs(fd)+std::fabs(grad[i]));
        if (rel>1e-4) { ++bad; std::printf("bad %zu fd=%g an=%g\n", i, fd, grad[i]); }
    }
    std::printf("bad=%d of 300\n", bad);
    return bad!=0;
}
