#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rmsd/tensor.hpp"

namespace rmsd {

enum class ParamKind { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

/// Running statistics are state, not learnable parameters.
constexpr bool is_trainable(ParamKind k) { return k != ParamKind::RunningMean && k != ParamKind::RunningVar; }

std::string_view to_string(ParamKind k);
ParamKind param_kind_from_string(std::string_view s);

/// Ordered, uniquely named model state with per-entry gradient and Adam moments.
/// Iteration order is insertion order.
template <typename Scalar>
class ModelParams {
public:
    struct Entry {
        std::string name;
        ParamKind kind = ParamKind::Weight;
        Tensor<Scalar> value;
        Tensor<Scalar> grad;  // same shape as value for trainable entries
        Tensor<Scalar> m;     // Adam first moment
        Tensor<Scalar> v;     // Adam second moment

        bool trainable() const { return is_trainable(kind); }
    };

    Entry& add(std::string name, ParamKind kind, Tensor<Scalar> value) {
        if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        Entry e{std::move(name), kind, std::move(value), {}, {}, {}};
        if (e.trainable()) {
            e.grad = Tensor<Scalar>::zeros(e.value.shape());
            e.m = Tensor<Scalar>::zeros(e.value.shape());
            e.v = Tensor<Scalar>::zeros(e.value.shape());
        }
        entries_.push_back(std::move(e));
        return entries_.back();
    }

    Entry* find(std::string_view name) {
        auto it = index_.find(std::string(name));
        return it == index_.end() ? nullptr : &entries_[it->second];
    }
    const Entry* find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        return it == index_.end() ? nullptr : &entries_[it->second];
    }
    Entry& at(std::string_view name) {
        if (Entry* e = find(name)) return *e;
        throw ContractError("unknown parameter: " + std::string(name));
    }
    const Entry& at(std::string_view name) const {
        if (const Entry* e = find(name)) return *e;
        throw ContractError("unknown parameter: " + std::string(name));
    }
    std::size_t index_of(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
        return it->second;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Number of learnable scalars (running statistics excluded).
    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable()) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_)
            if (e.trainable()) e.grad = Tensor<Scalar>::zeros(e.value.shape());
    }

    /// Values converted to another scalar type; gradients and moments reset.
    template <typename Other>
    ModelParams<Other> cast() const {
        ModelParams<Other> out;
        for (const auto& e : entries_) out.add(e.name, e.kind, e.value.template cast<Other>());
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rmsd
