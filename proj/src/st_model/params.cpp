#include "gencast/params.hpp"

#include <cmath>

#include "gencast/error.hpp"

namespace gencast {

Tensor& ParameterSet::add(const std::string& name, Tensor value, bool trainable) {
    if (contains(name)) throw Error("duplicate parameter '" + name + "'");
    index_.emplace(name, items_.size());
    items_.push_back({name, std::move(value), trainable});
    return items_.back().value;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? npos : it->second;
}

const Parameter& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return items_[it->second];
}

Parameter& ParameterSet::get(const std::string& name) {
    return const_cast<Parameter&>(static_cast<const ParameterSet&>(*this).get(name));
}

const Tensor& ParameterSet::value(const std::string& name) const { return get(name).value; }
Tensor& ParameterSet::value(const std::string& name) { return get(name).value; }

std::size_t ParameterSet::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : items_)
        if (p.trainable) n += p.value.size();
    return n;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params) : tape_(&tape), params_(&params) {
    vars_.reserve(params.size());
    for (const auto& p : params.items()) vars_.push_back(tape.leaf(p.value, p.trainable));
}

Var BoundParameters::operator()(const std::string& name) const {
    Var v = maybe(name);
    if (!v.valid()) throw Error("unknown parameter '" + name + "'");
    return v;
}

Var BoundParameters::maybe(const std::string& name) const {
    const std::size_t i = params_->index_of(name);
    return i == ParameterSet::npos ? Var{} : vars_[i];
}

std::vector<Tensor> BoundParameters::gradients() const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        const auto& g = vars_[i].grad();
        if (params_->items()[i].trainable && g) {
            out.push_back(*g);
        } else {
            out.emplace_back(vars_[i].shape());
        }
    }
    return out;
}

}  // namespace gencast
