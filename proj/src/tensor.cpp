#include "latentsde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lsde::ad {

Tensor Tensor::zeros(std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::vec(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor({n}, std::move(d));
}

double Tensor::item() const {
    if (data.size() != 1) throw std::runtime_error("Tensor::item on non-scalar");
    return data[0];
}

bool Tensor::finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](double v) { return std::isfinite(v); });
}

NodeId Tape::push(Tensor v, std::function<void(Tape&, NodeId)> back, const char* op) {
    if (!v.finite())
        throw std::runtime_error(std::string("non-finite value in op '") + op +
                                 "' at node " + std::to_string(nodes_.size()));
    Node n;
    n.value = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::leaf(Tensor v) { return push(std::move(v), nullptr, "leaf"); }

NodeId Tape::param(Tensor v, int slot) {
    NodeId id = push(std::move(v), nullptr, "param");
    nodes_[id].param_slot = slot;
    return id;
}

Tensor& Tape::grad_buf(NodeId n) {
    Node& nd = nodes_[n];
    if (!nd.has_grad) {
        nd.grad = Tensor::zeros(nd.value.shape);
        nd.has_grad = true;
    }
    return nd.grad;
}

const Tensor& Tape::grad(NodeId n) const {
    const Node& nd = nodes_[n];
    if (!nd.has_grad)
        throw std::runtime_error("gradient not populated for node " + std::to_string(n));
    return nd.grad;
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::runtime_error(std::string("shape mismatch in ") + op);
}
}  // namespace

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor &va = nodes_[a].value, &vb = nodes_[b].value;
    check_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    return push(std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    }, "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor &va = nodes_[a].value, &vb = nodes_[b].value;
    check_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    return push(std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] -= g.data[i];
        }
    }, "sub");
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor &va = nodes_[a].value, &vb = nodes_[b].value;
    check_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    return push(std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &va = t.nodes_[a].value, &vb = t.nodes_[b].value;
        Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i] * vb.data[i];
            gb.data[i] += g.data[i] * va.data[i];
        }
    }, "mul");
}

NodeId Tape::div(NodeId a, NodeId b) {
    const Tensor &va = nodes_[a].value, &vb = nodes_[b].value;
    check_same_shape(va, vb, "div");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= vb.data[i];
    return push(std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &va = t.nodes_[a].value, &vb = t.nodes_[b].value;
        Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i] / vb.data[i];
            gb.data[i] -= g.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
        }
    }, "div");
}

NodeId Tape::matvec(NodeId w, NodeId x) {
    const Tensor &vw = nodes_[w].value, &vx = nodes_[x].value;
    if (vw.shape.size() != 2 || vx.shape.size() != 1 || vw.cols() != vx.rows())
        throw std::runtime_error("shape mismatch in matvec");
    std::size_t m = vw.rows(), n = vw.cols();
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = vw.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * vx.data[j];
        out.data[i] = acc;
    }
    return push(std::move(out), [w, x, m, n](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &vw = t.nodes_[w].value, &vx = t.nodes_[x].value;
        Tensor &gw = t.grad_buf(w), &gx = t.grad_buf(x);
        for (std::size_t i = 0; i < m; ++i) {
            double gi = g.data[i];
            if (gi == 0.0) continue;
            double* gwrow = gw.data.data() + i * n;
            const double* wrow = vw.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                gwrow[j] += gi * vx.data[j];
                gx.data[j] += gi * wrow[j];
            }
        }
    }, "matvec");
}

NodeId Tape::scale(NodeId a, double k) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v *= k;
    return push(std::move(out), [a, k](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += k * g.data[i];
    }, "scale");
}

NodeId Tape::add_const(NodeId a, double k) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v += k;
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }, "add_const");
}

NodeId Tape::neg(NodeId a) { return scale(a, -1.0); }

NodeId Tape::square(NodeId a) { return mul(a, a); }

NodeId Tape::tanh(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v = std::tanh(v);
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor &g = t.nodes_[self].grad, &y = t.nodes_[self].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    }, "tanh");
}

NodeId Tape::sigmoid(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor &g = t.nodes_[self].grad, &y = t.nodes_[self].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    }, "sigmoid");
}

NodeId Tape::softplus(NodeId a) {
    Tensor out = nodes_[a].value;
    // log1p(exp(v)) with the large-v branch to avoid overflow
    for (double& v : out.data) v = v > 30.0 ? v : std::log1p(std::exp(v));
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[a].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] / (1.0 + std::exp(-x.data[i]));
    }, "softplus");
}

NodeId Tape::exp(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v = std::exp(v);
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor &g = t.nodes_[self].grad, &y = t.nodes_[self].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] * y.data[i];
    }, "exp");
}

NodeId Tape::log(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v = std::log(v);
    return push(std::move(out), [a](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[a].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] / x.data[i];
    }, "log");
}

NodeId Tape::clamp_min(NodeId a, double floor) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v = std::max(v, floor);
    return push(std::move(out), [a, floor](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[a].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x.data[i] > floor) ga.data[i] += g.data[i];
    }, "clamp_min");
}

NodeId Tape::sum(NodeId a) {
    double s = std::accumulate(nodes_[a].value.data.begin(),
                               nodes_[a].value.data.end(), 0.0);
    return push(Tensor::scalar(s), [a](Tape& t, NodeId self) {
        double g = t.nodes_[self].grad.data[0];
        Tensor& ga = t.grad_buf(a);
        for (double& v : ga.data) v += g;
    }, "sum");
}

NodeId Tape::dot(NodeId a, NodeId b) {
    const Tensor &va = nodes_[a].value, &vb = nodes_[b].value;
    check_same_shape(va, vb, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += va.data[i] * vb.data[i];
    return push(Tensor::scalar(s), [a, b](Tape& t, NodeId self) {
        double g = t.nodes_[self].grad.data[0];
        const Tensor &va = t.nodes_[a].value, &vb = t.nodes_[b].value;
        Tensor &ga = t.grad_buf(a), &gb = t.grad_buf(b);
        for (std::size_t i = 0; i < va.size(); ++i) {
            ga.data[i] += g * vb.data[i];
            gb.data[i] += g * va.data[i];
        }
    }, "dot");
}

NodeId Tape::concat(std::span<const NodeId> parts) {
    std::size_t total = 0;
    for (NodeId p : parts) total += nodes_[p].value.size();
    Tensor out = Tensor::zeros({total});
    std::size_t off = 0;
    for (NodeId p : parts) {
        const Tensor& v = nodes_[p].value;
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
        off += v.size();
    }
    std::vector<NodeId> ps(parts.begin(), parts.end());
    return push(std::move(out), [ps](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        std::size_t off = 0;
        for (NodeId p : ps) {
            Tensor& gp = t.grad_buf(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += g.data[off + i];
            off += gp.size();
        }
    }, "concat");
}

NodeId Tape::slice(NodeId a, std::size_t start, std::size_t len) {
    const Tensor& va = nodes_[a].value;
    if (start + len > va.size()) throw std::runtime_error("slice out of range");
    Tensor out({len}, std::vector<double>(va.data.begin() + start,
                                          va.data.begin() + start + len));
    return push(std::move(out), [a, start, len](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < len; ++i) ga.data[start + i] += g.data[i];
    }, "slice");
}

NodeId Tape::index(NodeId a, std::size_t i) { return slice(a, i, 1); }

NodeId Tape::logsumexp(NodeId a) {
    const Tensor& va = nodes_[a].value;
    double mx = *std::max_element(va.data.begin(), va.data.end());
    double s = 0.0;
    for (double v : va.data) s += std::exp(v - mx);
    return push(Tensor::scalar(mx + std::log(s)), [a](Tape& t, NodeId self) {
        double g = t.nodes_[self].grad.data[0];
        double lse = t.nodes_[self].value.data[0];
        const Tensor& x = t.nodes_[a].value;
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < x.size(); ++i)
            ga.data[i] += g * std::exp(x.data[i] - lse);
    }, "logsumexp");
}

NodeId Tape::smul(NodeId v, NodeId s) {
    const Tensor &vv = nodes_[v].value, &vs = nodes_[s].value;
    if (vs.size() != 1) throw std::runtime_error("smul scalar operand not scalar");
    Tensor out = vv;
    for (double& x : out.data) x *= vs.data[0];
    return push(std::move(out), [v, s](Tape& t, NodeId self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &vv = t.nodes_[v].value, &vs = t.nodes_[s].value;
        Tensor &gv = t.grad_buf(v), &gs = t.grad_buf(s);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gv.data[i] += g.data[i] * vs.data[0];
            gs.data[0] += g.data[i] * vv.data[i];
        }
    }, "smul");
}

NodeId Tape::detach(NodeId a) { return leaf(nodes_[a].value); }

void Tape::backward(NodeId loss) {
    if (nodes_[loss].value.size() != 1)
        throw std::runtime_error("backward requires a scalar loss node");
    if (swept_) throw std::runtime_error("tape already swept");
    swept_ = true;
    grad_buf(loss).data[0] = 1.0;
    for (NodeId n = loss; n >= 0; --n) {
        Node& nd = nodes_[n];
        if (!nd.has_grad || !nd.back) continue;
        nd.back(*this, n);
    }
}

void Tape::visit_param_grads(
    const std::function<void(int, const Tensor&)>& fn) const {
    for (const Node& nd : nodes_)
        if (nd.param_slot >= 0 && nd.has_grad) fn(nd.param_slot, nd.grad);
}

}  // namespace lsde::ad
