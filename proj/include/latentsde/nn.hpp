#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "latentsde/tensor.hpp"

namespace lsde::nn {

using ad::NodeId;
using ad::Tape;
using ad::Tensor;

// Named registry of learnable tensors. Slots are stable indices used to
// route gradients from tapes back to the optimizer.
class ParamStore {
public:
    int add(const std::string& name, Tensor init);
    int find(const std::string& name) const;  // -1 if absent

    std::size_t count() const { return entries_.size(); }
    Tensor& values(int slot) { return entries_[slot].value; }
    const Tensor& values(int slot) const { return entries_[slot].value; }
    const std::string& name(int slot) const { return entries_[slot].name; }

    std::size_t total_size() const;
    std::vector<double> flatten() const;
    void load_flat(const std::vector<double>& flat);

private:
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

// Per-tape cache mapping parameter slots to tape nodes, so a parameter
// used many times in one forward pass owns a single node and its
// gradient accumulates there.
class Binding {
public:
    Binding(Tape& tape, const ParamStore& store)
        : tape_(tape), store_(store), cache_(store.count(), -1) {}

    NodeId operator[](int slot);
    Tape& tape() { return tape_; }
    const ParamStore& store() const { return store_; }

private:
    Tape& tape_;
    const ParamStore& store_;
    std::vector<NodeId> cache_;
};

enum class Act { identity, tanh, sigmoid, softplus };

NodeId activate(Tape& tape, NodeId x, Act act);

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Tensor init_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
Tensor init_vector(std::size_t n, std::size_t fan_in, std::mt19937_64& rng);

// Feed-forward stack of affine layers with per-layer activations.
class DenseStack {
public:
    static DenseStack create(ParamStore& store, const std::string& prefix,
                             const std::vector<std::size_t>& dims, Act hidden,
                             Act out, std::mt19937_64& rng);

    NodeId apply(Binding& bind, NodeId x) const;
    std::size_t in_dim() const { return in_dim_; }
    std::size_t out_dim() const { return out_dim_; }

private:
    struct Layer {
        int w, b;
        Act act;
    };
    std::vector<Layer> layers_;
    std::size_t in_dim_ = 0, out_dim_ = 0;
};

// Gated recurrent update (GRU).
class GruCell {
public:
    static GruCell create(ParamStore& store, const std::string& prefix,
                          std::size_t in_dim, std::size_t hidden,
                          std::mt19937_64& rng);

    NodeId step(Binding& bind, NodeId x, NodeId h) const;
    std::size_t hidden() const { return hidden_; }

private:
    int wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
    std::size_t in_dim_ = 0, hidden_ = 0;
};

// Full LSTM cell; state is (hidden, cell).
class LstmCell {
public:
    static LstmCell create(ParamStore& store, const std::string& prefix,
                           std::size_t in_dim, std::size_t hidden,
                           std::mt19937_64& rng);

    std::pair<NodeId, NodeId> step(Binding& bind, NodeId x, NodeId h,
                                   NodeId c) const;
    std::size_t hidden() const { return hidden_; }

private:
    int wi_, ui_, bi_, wf_, uf_, bf_, wg_, ug_, bg_, wo_, uo_, bo_;
    std::size_t in_dim_ = 0, hidden_ = 0;
};

// Scan stacked GRU cells over a masked sequence. Steps whose observed
// flag is false leave every layer's hidden state untouched and feed no
// value information forward. Returns the top-layer hidden after each step.
std::vector<NodeId> recurrent_scan(Binding& bind,
                                   const std::vector<GruCell>& cells,
                                   const std::vector<NodeId>& inputs,
                                   const std::vector<bool>& observed);

}  // namespace lsde::nn
