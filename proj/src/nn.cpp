#include "latentsde/nn.hpp"

#include <cmath>

namespace lsde::nn {

int ParamStore::add(const std::string& name, Tensor init) {
    if (by_name_.count(name))
        throw std::runtime_error("duplicate parameter name: " + name);
    if (!init.finite())
        throw std::runtime_error("non-finite init for parameter " + name);
    int slot = static_cast<int>(entries_.size());
    entries_.push_back({name, std::move(init)});
    by_name_[name] = slot;
    return slot;
}

int ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const auto& e : entries_)
        flat.insert(flat.end(), e.value.data.begin(), e.value.data.end());
    return flat;
}

void ParamStore::load_flat(const std::vector<double>& flat) {
    if (flat.size() != total_size())
        throw std::runtime_error("flat parameter vector size mismatch");
    std::size_t off = 0;
    for (auto& e : entries_) {
        std::copy(flat.begin() + off, flat.begin() + off + e.value.size(),
                  e.value.data.begin());
        off += e.value.size();
    }
}

NodeId Binding::operator[](int slot) {
    if (cache_[slot] < 0) cache_[slot] = tape_.param(store_.values(slot), slot);
    return cache_[slot];
}

NodeId activate(Tape& tape, NodeId x, Act act) {
    switch (act) {
        case Act::identity: return x;
        case Act::tanh: return tape.tanh(x);
        case Act::sigmoid: return tape.sigmoid(x);
        case Act::softplus: return tape.softplus(x);
    }
    throw std::runtime_error("unknown activation");
}

Tensor init_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = dist(rng);
    return t;
}

Tensor init_vector(std::size_t n, std::size_t fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros({n});
    for (double& v : t.data) v = dist(rng);
    return t;
}

DenseStack DenseStack::create(ParamStore& store, const std::string& prefix,
                              const std::vector<std::size_t>& dims, Act hidden,
                              Act out, std::mt19937_64& rng) {
    if (dims.size() < 2) throw std::runtime_error("DenseStack needs >= 2 dims");
    DenseStack s;
    s.in_dim_ = dims.front();
    s.out_dim_ = dims.back();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        std::string tag = prefix + ".l" + std::to_string(l);
        layer.w = store.add(tag + ".w", init_matrix(dims[l + 1], dims[l], rng));
        layer.b = store.add(tag + ".b", init_vector(dims[l + 1], dims[l], rng));
        layer.act = (l + 2 == dims.size()) ? out : hidden;
        s.layers_.push_back(layer);
    }
    return s;
}

NodeId DenseStack::apply(Binding& bind, NodeId x) const {
    Tape& t = bind.tape();
    if (t.value(x).size() != in_dim_)
        throw std::runtime_error("DenseStack input dim mismatch");
    NodeId h = x;
    for (const Layer& l : layers_) {
        h = t.add(t.matvec(bind[l.w], h), bind[l.b]);
        h = activate(t, h, l.act);
    }
    return h;
}

GruCell GruCell::create(ParamStore& store, const std::string& prefix,
                        std::size_t in_dim, std::size_t hidden,
                        std::mt19937_64& rng) {
    GruCell c;
    c.in_dim_ = in_dim;
    c.hidden_ = hidden;
    auto mk = [&](const char* g, int& w, int& u, int& b) {
        w = store.add(prefix + "." + g + ".w", init_matrix(hidden, in_dim, rng));
        u = store.add(prefix + "." + g + ".u", init_matrix(hidden, hidden, rng));
        b = store.add(prefix + "." + g + ".b", init_vector(hidden, hidden, rng));
    };
    mk("z", c.wz_, c.uz_, c.bz_);
    mk("r", c.wr_, c.ur_, c.br_);
    mk("n", c.wn_, c.un_, c.bn_);
    return c;
}

NodeId GruCell::step(Binding& bind, NodeId x, NodeId h) const {
    Tape& t = bind.tape();
    NodeId z = t.sigmoid(t.add(t.add(t.matvec(bind[wz_], x), t.matvec(bind[uz_], h)), bind[bz_]));
    NodeId r = t.sigmoid(t.add(t.add(t.matvec(bind[wr_], x), t.matvec(bind[ur_], h)), bind[br_]));
    NodeId n = t.tanh(t.add(t.add(t.matvec(bind[wn_], x), t.mul(r, t.matvec(bind[un_], h))), bind[bn_]));
    // h' = (1 - z) * h + z * n
    NodeId one_minus_z = t.add_const(t.neg(z), 1.0);
    return t.add(t.mul(one_minus_z, h), t.mul(z, n));
}

LstmCell LstmCell::create(ParamStore& store, const std::string& prefix,
                          std::size_t in_dim, std::size_t hidden,
                          std::mt19937_64& rng) {
    LstmCell c;
    c.in_dim_ = in_dim;
    c.hidden_ = hidden;
    auto mk = [&](const char* g, int& w, int& u, int& b) {
        w = store.add(prefix + "." + g + ".w", init_matrix(hidden, in_dim, rng));
        u = store.add(prefix + "." + g + ".u", init_matrix(hidden, hidden, rng));
        b = store.add(prefix + "." + g + ".b", init_vector(hidden, hidden, rng));
    };
    mk("i", c.wi_, c.ui_, c.bi_);
    mk("f", c.wf_, c.uf_, c.bf_);
    mk("g", c.wg_, c.ug_, c.bg_);
    mk("o", c.wo_, c.uo_, c.bo_);
    return c;
}

std::pair<NodeId, NodeId> LstmCell::step(Binding& bind, NodeId x, NodeId h,
                                         NodeId c) const {
    Tape& t = bind.tape();
    auto gate = [&](int w, int u, int b) {
        return t.add(t.add(t.matvec(bind[w], x), t.matvec(bind[u], h)), bind[b]);
    };
    NodeId i = t.sigmoid(gate(wi_, ui_, bi_));
    NodeId f = t.sigmoid(gate(wf_, uf_, bf_));
    NodeId g = t.tanh(gate(wg_, ug_, bg_));
    NodeId o = t.sigmoid(gate(wo_, uo_, bo_));
    NodeId c_next = t.add(t.mul(f, c), t.mul(i, g));
    NodeId h_next = t.mul(o, t.tanh(c_next));
    return {h_next, c_next};
}

std::vector<NodeId> recurrent_scan(Binding& bind,
                                   const std::vector<GruCell>& cells,
                                   const std::vector<NodeId>& inputs,
                                   const std::vector<bool>& observed) {
    if (inputs.empty()) throw std::runtime_error("recurrent_scan: empty sequence");
    if (inputs.size() != observed.size())
        throw std::runtime_error("recurrent_scan: mask length mismatch");
    Tape& t = bind.tape();
    std::vector<NodeId> hidden;
    for (const GruCell& c : cells)
        hidden.push_back(t.leaf(Tensor::zeros({c.hidden()})));
    std::vector<NodeId> out;
    out.reserve(inputs.size());
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        if (observed[s]) {
            NodeId x = inputs[s];
            for (std::size_t l = 0; l < cells.size(); ++l) {
                hidden[l] = cells[l].step(bind, x, hidden[l]);
                x = hidden[l];
            }
        }
        out.push_back(hidden.back());
    }
    return out;
}

}  // namespace lsde::nn
