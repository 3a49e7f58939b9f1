#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "hess/gradcheck.hpp"
#include "hess/network.hpp"
#include "hess/synthetic.hpp"
#include "hess/train.hpp"

using namespace hess;

namespace {

Dataset small_dataset(std::uint64_t seed, std::size_t count, std::uint32_t size = 16, std::size_t shapes = 2) {
    SyntheticConfig sc;
    sc.width = size;
    sc.height = size;
    sc.num_shapes = shapes;
    return make_synthetic_dataset(seed, sc, count);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(Scalar)) != 0) return false;
    return true;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("hess_test_network_" + name);
}

}  // namespace

TEST_CASE("construction is deterministic and respects the toggles") {
    NetworkConfig cfg;
    HybridNetwork a(cfg), b(cfg);
    REQUIRE(a.params().entries().size() == b.params().entries().size());
    for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
        CHECK(a.params().entries()[i].first == b.params().entries()[i].first);
        CHECK(bitwise_equal(a.params().entries()[i].second, b.params().entries()[i].second));
    }
    CHECK(a.params().count() < 100'000);

    NetworkConfig no_eds = cfg;
    no_eds.eds_on = false;
    CHECK(HybridNetwork(no_eds).params().count() < a.params().count());

    NetworkConfig bad = cfg;
    bad.scales.clear();
    CHECK_THROWS_AS(HybridNetwork{bad}, std::invalid_argument);
}

TEST_CASE("forward output shape and label layout") {
    const auto data = small_dataset(3, 2, 32);
    NetworkConfig cfg;
    HybridNetwork net(cfg);
    const auto batch = make_batch(data, {0, 1}, cfg);
    const auto logits = net.forward(batch);
    CHECK(logits.shape() == Shape{2, 3, 32, 32});
    CHECK(argmax_labels(logits).size() == 2 * 32 * 32);
    CHECK(batch.labels.size() == 2 * 32 * 32);
}

TEST_CASE("empty event stream: forward equals the frames-only path bitwise") {
    auto data = small_dataset(5, 2, 32);
    for (auto& s : data.samples) s.events.events.clear();
    for (bool atw : {true, false})
        for (bool csf : {true, false}) {
            NetworkConfig cfg;
            cfg.atw_on = atw;
            cfg.csf_on = csf;
            HybridNetwork net(cfg);
            const auto batch = make_batch(data, {0, 1}, cfg);
            for (const auto& per_scale : batch.refs)
                for (const auto& r : per_scale) CHECK(r.empty());
            NoGradGuard guard;
            CHECK(bitwise_equal(net.forward(batch), net.forward_frames_only(batch.frames)));
        }
}

TEST_CASE("mismatched voxel bins are rejected") {
    const auto data = small_dataset(6, 1);
    NetworkConfig cfg;
    HybridNetwork net(cfg);
    auto batch = make_batch(data, {0}, cfg);
    batch.voxel = Tensor::zeros({1, 3, 16, 16});
    CHECK_THROWS_AS(net.forward(batch), std::invalid_argument);
}

TEST_CASE("whole network passes finite differences with sigmoid spikes") {
    const auto r = gradcheck_network();
    CHECK(r.instances == 1);
    CHECK(r.entries > 100);
    CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("segmentation loss: uniform logits give ln K, two-pixel hand case") {
    const auto uniform = Tensor::zeros({1, 4, 2, 3});
    CHECK(segmentation_loss(uniform, {0, 1, 2, 3, 0, 1}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    // Pixel 0: logits (2, 0), label 0. Pixel 1: logits (0, 1), label 0.
    const auto logits = Tensor::from({1, 2, 1, 2}, {2.0, 0.0, 0.0, 1.0});
    const double l0 = std::log(1.0 + std::exp(-2.0));
    const double l1 = std::log(1.0 + std::exp(1.0));
    CHECK(segmentation_loss(logits, {0, 0}).item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
    CHECK(segmentation_loss(logits, {0, 255}).item() == doctest::Approx(l0).epsilon(1e-14));
    CHECK_THROWS(segmentation_loss(logits, {0, 2}));
}

TEST_CASE("argmax: hand case with ties toward the lower class") {
    const auto logits = Tensor::from({1, 3, 1, 3}, {0.0, 5.0, 1.0,  //
                                                    2.0, 5.0, 0.0,  //
                                                    1.0, -1.0, 1.0});
    CHECK(argmax_labels(logits) == std::vector<int>{1, 0, 0});
    CHECK(argmax_labels(Tensor::zeros({1, 1, 2, 2})) == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.warmup = 4;
    cfg.iterations = 10;
    CHECK(learning_rate_at(cfg, 0) == doctest::Approx(0.25));
    CHECK(learning_rate_at(cfg, 3) == doctest::Approx(1.0));
    CHECK(learning_rate_at(cfg, 5) == doctest::Approx(std::pow(0.5, 0.9)));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    const auto data = small_dataset(7, 2);
    NetworkConfig cfg;
    HybridNetwork net(cfg), ref(cfg);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.weight_decay = 0.0;
    tc.iterations = 3;
    tc.warmup = 1;
    tc.batch_size = 2;
    train(net, data, tc);
    for (std::size_t i = 0; i < net.params().entries().size(); ++i)
        CHECK(bitwise_equal(net.params().entries()[i].second, ref.params().entries()[i].second));
}

TEST_CASE("training is reproducible and can overfit one sample") {
    const auto data = small_dataset(8, 1, 32, 2);
    NetworkConfig cfg;
    TrainConfig tc;
    tc.iterations = 500;
    tc.batch_size = 1;
    tc.warmup = 20;
    HybridNetwork a(cfg), b(cfg);
    const auto ra = train(a, data, tc);
    CHECK(ra.losses.back() < 0.05);

    tc.iterations = 20;
    HybridNetwork c(cfg);
    const auto rb = train(b, data, tc), rc = train(c, data, tc);
    CHECK(rb.losses == rc.losses);
}

TEST_CASE("single-class model predicts class zero") {
    const auto data = small_dataset(9, 1);
    NetworkConfig cfg;
    cfg.num_classes = 1;
    HybridNetwork net(cfg);
    auto batch = make_batch(data, {0}, cfg);
    for (auto& l : batch.labels) l = 0;
    for (auto v : predict(net, batch)) CHECK(v == 0);
    CHECK(segmentation_loss(net.forward(batch), batch.labels).item() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("configuration JSON round trip") {
    NetworkConfig cfg;
    cfg.scales = {{2, 8}, {4, 16}};
    cfg.csf_on = false;
    cfg.lif.tau = 3.0;
    nlohmann::json j = cfg;
    CHECK(j.get<NetworkConfig>() == cfg);
    TrainConfig tc;
    tc.iterations = 17;
    tc.flip = true;
    nlohmann::json k = tc;
    CHECK(k.get<TrainConfig>().iterations == 17);
    CHECK(k.get<TrainConfig>().flip);
}

TEST_CASE("checkpoint round trip is bitwise") {
    const auto data = small_dataset(10, 2);
    NetworkConfig cfg;
    cfg.scales = {{2, 8}, {4, 16}};
    HybridNetwork net(cfg);
    AdamW opt(net.params(), 1e-4);
    TrainConfig tc;
    tc.iterations = 3;
    tc.warmup = 1;
    tc.batch_size = 2;
    train(net, data, tc, &opt);

    const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
    save_checkpoint(p1, net, &opt);
    const auto loaded = load_checkpoint(p1);
    CHECK(loaded.config == cfg);
    CHECK(loaded.optimizer.steps() == 3);
    for (std::size_t i = 0; i < net.params().entries().size(); ++i)
        CHECK(bitwise_equal(net.params().entries()[i].second, loaded.net.params().entries()[i].second));
    save_checkpoint(p2, loaded.net, &loaded.optimizer);
    CHECK(slurp(p1) == slurp(p2));

    auto bytes = slurp(p1);
    bytes.push_back(0);
    {
        std::ofstream out(p2, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS(load_checkpoint(p2));
    bytes.resize(40);
    {
        std::ofstream out(p2, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS(load_checkpoint(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
