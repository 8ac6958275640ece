#include "ssmqa/lora.hpp"

#include <cmath>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/model.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

namespace {

void check_adapter(const LoraAdapter& ad) {
    if (ad.rank < 1 || ad.a.rank() != 2 || ad.b.rank() != 2 || ad.a.dim(0) != ad.rank || ad.b.dim(1) != ad.rank) {
        throw ShapeError("lora adapter '" + ad.target + "': rank mismatch (A " + shape_str(ad.a.shape()) + ", B " +
                         shape_str(ad.b.shape()) + ", r=" + std::to_string(ad.rank) + ")");
    }
}

} // namespace

LoraAdapter make_adapter(const std::string& target, std::int64_t d_in, std::int64_t d_out, const LoraConfig& cfg,
                         std::uint64_t seed) {
    if (cfg.rank < 1) {
        throw std::invalid_argument("lora rank must be >= 1");
    }
    LoraAdapter ad;
    ad.target = target;
    ad.rank = cfg.rank;
    ad.alpha = cfg.alpha;
    ad.dropout = cfg.dropout;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    ad.a = Tensor::uniform({cfg.rank, d_in}, seed, -bound, bound);
    ad.b = Tensor::zeros({d_out, cfg.rank});
    ad.a.set_requires_grad(true);
    ad.b.set_requires_grad(true);
    return ad;
}

Tensor lora_forward(const Tensor& x, const Tensor& w_base, const LoraAdapter& adapter, bool training, Rng* rng) {
    check_adapter(adapter);
    if (adapter.d_in() != w_base.dim(0) || adapter.d_out() != w_base.dim(1)) {
        throw ShapeError("lora adapter '" + adapter.target + "' does not match base weight " +
                         shape_str(w_base.shape()));
    }
    const Tensor base = matmul(x, w_base);
    Tensor xin = x;
    if (training && adapter.dropout > 0.0) {
        if (rng == nullptr) {
            throw std::invalid_argument("lora_forward: training dropout needs an rng");
        }
        xin = dropout(x, adapter.dropout, *rng, true);
    }
    const Tensor down = matmul(xin, transpose(adapter.a));
    const Tensor up = matmul(down, transpose(adapter.b));
    return add(base, scale(up, adapter.scale()));
}

Tensor lora_delta(const LoraAdapter& adapter) {
    check_adapter(adapter);
    return scale(matmul(transpose(adapter.a), transpose(adapter.b)), adapter.scale());
}

Tensor lora_merge(const Tensor& w_base, const LoraAdapter& adapter) {
    NoGradGuard guard;
    return add(w_base, lora_delta(adapter)).detach();
}

Tensor lora_unmerge(const Tensor& w_merged, const LoraAdapter& adapter) {
    NoGradGuard guard;
    return sub(w_merged, lora_delta(adapter)).detach();
}

void AdapterSet::add(LoraAdapter adapter) {
    check_adapter(adapter);
    const std::string key = adapter.target;
    adapters_.insert_or_assign(key, std::move(adapter));
}

const LoraAdapter* AdapterSet::find(const std::string& target) const {
    const auto it = adapters_.find(target);
    return it == adapters_.end() ? nullptr : &it->second;
}

std::vector<std::string> AdapterSet::targets() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : adapters_) {
        out.push_back(name);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> AdapterSet::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, ad] : adapters_) {
        out.emplace_back("adapters/" + name + "/A", ad.a);
        out.emplace_back("adapters/" + name + "/B", ad.b);
    }
    return out;
}

std::size_t AdapterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, ad] : adapters_) {
        n += ad.parameter_count();
    }
    return n;
}

std::vector<std::string> select_target_layers(const ModelConfig& config) {
    std::vector<std::string> out{"embed"};
    const auto variants = config.layer_variants();
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        if (variants[i] == BlockVariant::swa_hybrid) {
            for (const char* p : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
                out.push_back(prefix + p);
            }
        } else {
            out.push_back(prefix + "in_proj");
            out.push_back(prefix + "out_proj");
        }
    }
    return out;
}

std::vector<std::string> select_target_layers(SsmModel& model) {
    model.freeze_base();
    return select_target_layers(model.config());
}

AdapterSet attach_adapters(const SsmModel& model, const std::vector<std::string>& targets, const LoraConfig& cfg,
                           std::uint64_t seed) {
    AdapterSet set;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Tensor& w = model.parameter(targets[i]);
        set.add(make_adapter(targets[i], w.dim(0), w.dim(1), cfg, derive_seed(seed, i)));
    }
    return set;
}

} // namespace ssmqa
