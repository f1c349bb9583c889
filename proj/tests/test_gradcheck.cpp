#include <catch2/catch_amalgamated.hpp>

#include "choir/model.hpp"
#include "gradcheck_common.hpp"
#include "helpers.hpp"

using namespace choir;
using choir::testing::gradcheck;
using choir::testing::gradcheck_sequence;

namespace {

ModelConfig check_config(int layers) {
    ModelConfig cfg;
    cfg.vocab_size = vocab::kSize;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_layers = layers;
    cfg.d_ff = 16;
    cfg.max_len = 32;
    cfg.max_rel_dist = 4;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences, one layer") {
    ModelConfig cfg = check_config(1);
    TokenSeq seq = gradcheck_sequence(8, cfg.vocab_size, 5);
    Pcg32 rng(6, 3);
    std::vector<int> targets(seq.size());
    for (auto& t : targets) t = static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.vocab_size)));
    std::vector<std::uint8_t> mask(seq.size(), 1);
    mask[2] = 0;  // a masked position must not starve any gradient path

    auto report = gradcheck(cfg, seq, targets, mask, 12);
    INFO("worst tensor " << report.worst_tensor << " rel err " << report.worst_rel);
    CHECK(report.worst_rel <= 1e-3);
    CHECK(report.tensors.size() == 16);  // embedding + 13 per layer + head pair
}

TEST_CASE("analytic gradients match finite differences, two layers no pe") {
    ModelConfig cfg = check_config(2);
    cfg.use_absolute_pe = false;
    TokenSeq seq = gradcheck_sequence(6, cfg.vocab_size, 15);
    Pcg32 rng(16, 3);
    std::vector<int> targets(seq.size());
    for (auto& t : targets) t = static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.vocab_size)));
    std::vector<std::uint8_t> mask(seq.size(), 1);

    auto report = gradcheck(cfg, seq, targets, mask, 22);
    INFO("worst tensor " << report.worst_tensor << " rel err " << report.worst_rel);
    CHECK(report.worst_rel <= 1e-3);
    for (const auto& tensor : report.tensors) {
        INFO(tensor.name << " rel err " << tensor.worst_rel);
        CHECK(tensor.worst_rel <= 1e-3);
    }
}
