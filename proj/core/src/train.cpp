#include "hess/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "binary_io.hpp"
#include "hess/ops.hpp"

namespace hess {

namespace {

constexpr char kMagic[4] = {'H', 'E', 'S', 'S'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (iterations == 0) fail("iterations must be >= 1");
    if (warmup > iterations) fail("warmup exceeds iterations");
    if (!(poly_power > 0.0)) fail("poly_power must be > 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"iterations", c.iterations},
         {"warmup", c.warmup},               {"poly_power", c.poly_power},     {"batch_size", c.batch_size},
         {"seed", c.seed},                   {"ignore_index", c.ignore_index}, {"flip", c.flip},
         {"reshuffle", c.reshuffle}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.iterations = j.value("iterations", d.iterations);
    c.warmup = j.value("warmup", d.warmup);
    c.poly_power = j.value("poly_power", d.poly_power);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.ignore_index = j.value("ignore_index", d.ignore_index);
    c.flip = j.value("flip", d.flip);
    c.reshuffle = j.value("reshuffle", d.reshuffle);
}

Scalar learning_rate_at(const TrainConfig& cfg, std::size_t iteration) {
    if (iteration < cfg.warmup) {
        return cfg.learning_rate * static_cast<Scalar>(iteration + 1) / static_cast<Scalar>(cfg.warmup);
    }
    const Scalar progress = static_cast<Scalar>(iteration) / static_cast<Scalar>(cfg.iterations);
    return cfg.learning_rate * std::pow(std::max(0.0, 1.0 - progress), cfg.poly_power);
}

AdamW::AdamW(const ParamStore& params, Scalar weight_decay) : weight_decay_(weight_decay) {
    for (const auto& [name, t] : params.entries()) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamW::step(ParamStore& params, Scalar lr) {
    constexpr Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const auto& entries = params.entries();
    if (entries.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed since construction");
    ++steps_;
    const Scalar c1 = 1.0 - std::pow(b1, static_cast<Scalar>(steps_));
    const Scalar c2 = 1.0 - std::pow(b2, static_cast<Scalar>(steps_));
    for (std::size_t p = 0; p < entries.size(); ++p) {
        Tensor t = entries[p].second;
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto x = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        const Scalar decay = t.rank() >= 2 ? weight_decay_ : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps) + decay * x[i]);
        }
    }
}

TrainResult train(HybridNetwork& net, const Dataset& data, const TrainConfig& cfg, AdamW* optimizer,
                  const TrainCallback& callback) {
    cfg.validate();
    if (data.samples.empty()) throw std::invalid_argument("train: dataset is empty");
    AdamW local(net.params(), cfg.weight_decay);
    AdamW& opt = optimizer ? *optimizer : local;

    std::mt19937_64 rng(cfg.seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    Dataset flipped;
    if (cfg.flip) {
        flipped.width = data.width;
        flipped.height = data.height;
        flipped.num_classes = data.num_classes;
    }

    TrainResult result;
    result.losses.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::vector<std::size_t> picks;
        while (picks.size() < cfg.batch_size) {
            if (cursor == order.size()) {
                if (cfg.reshuffle) std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            picks.push_back(order[cursor++]);
        }
        Batch batch;
        if (cfg.flip) {
            flipped.samples.clear();
            for (auto i : picks) flipped.samples.push_back(coin(rng) ? flip_horizontal(data.samples[i]) : data.samples[i]);
            std::vector<std::size_t> local_idx(picks.size());
            std::iota(local_idx.begin(), local_idx.end(), 0);
            batch = make_batch(flipped, local_idx, net.config());
        } else {
            batch = make_batch(data, picks, net.config());
        }

        net.params().zero_grad();
        Tensor loss = segmentation_loss(net.forward(batch), batch.labels, cfg.ignore_index);
        const Scalar value = loss.item();
        if (!std::isfinite(value)) {
            throw std::runtime_error("train: loss became " + std::to_string(value) + " at iteration " +
                                     std::to_string(it) + " (lr " + std::to_string(learning_rate_at(cfg, it)) + ")");
        }
        loss.backward();
        const Scalar lr = learning_rate_at(cfg, it);
        opt.step(net.params(), lr);
        result.losses.push_back(value);
        if (callback) callback(it, value, lr);
    }
    return result;
}

void save_checkpoint(const std::filesystem::path& path, const HybridNetwork& net, const AdamW* optimizer) {
    std::vector<unsigned char> buf(kMagic, kMagic + 4);
    binio::store_u32(buf, kVersion);
    nlohmann::json cj = net.config();
    const std::string config = cj.dump();
    binio::store_u32(buf, static_cast<std::uint32_t>(config.size()));
    buf.insert(buf.end(), config.begin(), config.end());

    const auto& entries = net.params().entries();
    binio::store_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        binio::store_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        binio::store_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) binio::store_u32(buf, static_cast<std::uint32_t>(d));
        for (auto v : t.data()) binio::store_f64(buf, v);
    }

    binio::store_u64(buf, optimizer ? optimizer->steps() : 0);
    binio::store_f64(buf, optimizer ? optimizer->weight_decay() : 0.0);
    for (std::size_t p = 0; p < entries.size(); ++p) {
        for (std::size_t i = 0; i < entries[p].second.size(); ++i)
            binio::store_f64(buf, optimizer ? optimizer->first_moment()[p][i] : 0.0);
        for (std::size_t i = 0; i < entries[p].second.size(); ++i)
            binio::store_f64(buf, optimizer ? optimizer->second_moment()[p][i] : 0.0);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const auto buf = binio::slurp(in);
    binio::Reader r(buf, path.string());
    const unsigned char* magic = r.take(4);
    if (!std::equal(magic, magic + 4, kMagic)) throw std::runtime_error(path.string() + ": not a HESS checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t clen = r.u32();
    const unsigned char* cbytes = r.take(clen);
    NetworkConfig config = nlohmann::json::parse(std::string(cbytes, cbytes + clen)).get<NetworkConfig>();
    HybridNetwork net(config);

    const auto& entries = net.params().entries();
    const std::uint32_t count = r.u32();
    if (count != entries.size()) {
        throw std::runtime_error(path.string() + ": checkpoint has " + std::to_string(count) +
                                 " parameters, config builds " + std::to_string(entries.size()));
    }
    for (const auto& [name, t] : entries) {
        const std::uint32_t nlen = r.u32();
        const unsigned char* nb = r.take(nlen);
        const std::string stored(nb, nb + nlen);
        if (stored != name) throw std::runtime_error(path.string() + ": expected parameter " + name + ", found " + stored);
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
        if (shape != t.shape()) {
            throw std::runtime_error(path.string() + ": parameter " + name + " has shape " + shape_str(shape) +
                                     ", expected " + shape_str(t.shape()));
        }
        Tensor target = t;
        for (auto& v : target.mutable_data()) v = r.f64();
    }

    const std::uint64_t steps = r.u64();
    const Scalar decay = r.f64();
    AdamW opt(net.params(), decay);
    opt.set_steps(steps);
    for (std::size_t p = 0; p < entries.size(); ++p) {
        for (auto& v : opt.first_moment()[p]) v = r.f64();
        for (auto& v : opt.second_moment()[p]) v = r.f64();
    }
    if (!r.done()) throw std::runtime_error(path.string() + ": trailing bytes after checkpoint");
    return Checkpoint{std::move(config), std::move(net), std::move(opt)};
}

}  // namespace hess
