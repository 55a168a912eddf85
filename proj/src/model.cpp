#include "latentsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "latentsde/rng.hpp"
#include <json.hpp>

namespace lsde::model {

using ad::NodeId;
using ad::Tape;
using ad::Tensor;
using json = nlohmann::ordered_json;

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::sde: return "sde";
        case ModelKind::ode: return "ode";
        case ModelKind::lstm: return "lstm";
    }
    throw std::runtime_error("bad model kind");
}

ModelKind kind_from_string(const std::string& s) {
    if (s == "sde") return ModelKind::sde;
    if (s == "ode") return ModelKind::ode;
    if (s == "lstm") return ModelKind::lstm;
    throw std::runtime_error("unknown model kind: " + s);
}

namespace {

std::string head_name(HeadKind h) {
    switch (h) {
        case HeadKind::gaussian: return "gaussian";
        case HeadKind::poisson: return "poisson";
        case HeadKind::categorical: return "categorical";
    }
    throw std::runtime_error("bad head kind");
}

HeadKind head_from_string(const std::string& s) {
    if (s == "gaussian") return HeadKind::gaussian;
    if (s == "poisson") return HeadKind::poisson;
    if (s == "categorical") return HeadKind::categorical;
    throw std::runtime_error("unknown head kind: " + s);
}

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

// A rolled-out latent trajectory indexed by time; lookups snap to the
// nearest recorded stamp.
struct Roll {
    std::vector<double> times;
    std::vector<NodeId> states;

    NodeId at(double t) const {
        auto it = std::lower_bound(times.begin(), times.end(), t);
        if (it == times.end()) return states.back();
        auto i = static_cast<std::size_t>(it - times.begin());
        if (i > 0 && t - times[i - 1] < times[i] - t) --i;
        return states[i];
    }
};

// Piecewise-constant encoder context; queries hold to the right so the
// drift at time t conditions on observations at or after t.
struct Ctx {
    std::vector<double> times;
    std::vector<NodeId> knots;

    NodeId query(double t) const {
        auto it = std::lower_bound(times.begin(), times.end(), t - 1e-12);
        if (it == times.end()) return knots.back();
        return knots[static_cast<std::size_t>(it - times.begin())];
    }
};

std::vector<bool> observed_steps(const Task& task) {
    std::vector<bool> obs(task.times.size(), false);
    for (const auto& m : task.masks)
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) obs[i] = true;
    return obs;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15ULL));
}

double quantile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    if (xs.size() == 1) return xs[0];
    double pos = q * static_cast<double>(xs.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, xs.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double var_of(const std::vector<double>& xs, double mu) {
    double s = 0.0;
    for (double x : xs) s += (x - mu) * (x - mu);
    return s / static_cast<double>(xs.size());
}

}  // namespace

struct LatentModel::Components {
    std::vector<nn::GruCell> enc_fw, enc_bw;
    nn::DenseStack init_head;  // enc hidden -> (mean, raw std)
    int p0_mean = -1, p0_logstd = -1;

    nn::DenseStack drift_prior, diffusion, drift_post;  // sde / ode
    std::vector<nn::LstmCell> lstm;                     // lstm
    nn::DenseStack lstm_h0, lstm_c0, lstm_out;

    std::vector<nn::DenseStack> heads;  // aligned with cfg.vars
    nn::DenseStack readout;             // gaussian probe on detached latents

    std::size_t enc_in = 0;
    std::vector<std::size_t> offsets;  // param slot -> flat offset
};

void LatentModel::build_components() {
    if (cfg_.vars.empty()) throw std::runtime_error("model config has no variables");
    if (cfg_.d_x < 1 || cfg_.enc_hidden < 1) throw std::runtime_error("bad model dims");
    comp_ = std::make_unique<Components>();
    auto& c = *comp_;
    std::mt19937_64 rng(cfg_.init_seed);

    std::size_t v = cfg_.vars.size();
    c.enc_in = 2 * v + 1 + cfg_.covariate_names.size();
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
        std::size_t in = l == 0 ? c.enc_in : cfg_.enc_hidden;
        c.enc_fw.push_back(nn::GruCell::create(store_, "enc_fw" + std::to_string(l),
                                               in, cfg_.enc_hidden, rng));
        c.enc_bw.push_back(nn::GruCell::create(store_, "enc_bw" + std::to_string(l),
                                               in, cfg_.enc_hidden, rng));
    }
    c.init_head = nn::DenseStack::create(store_, "init_head",
                                         {cfg_.enc_hidden, 2 * cfg_.d_x},
                                         nn::Act::tanh, nn::Act::identity, rng);
    c.p0_mean = store_.add("p0_mean", Tensor::zeros({cfg_.d_x}));
    c.p0_logstd = store_.add("p0_logstd", Tensor::zeros({cfg_.d_x}));

    std::size_t du = cfg_.d_u;
    std::size_t h = cfg_.drift_hidden;
    if (cfg_.kind == ModelKind::lstm) {
        for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
            std::size_t in = l == 0 ? du + cfg_.enc_hidden + 1 : cfg_.lstm_hidden;
            c.lstm.push_back(nn::LstmCell::create(store_, "lstm" + std::to_string(l),
                                                  in, cfg_.lstm_hidden, rng));
        }
        c.lstm_h0 = nn::DenseStack::create(
            store_, "lstm_h0", {cfg_.d_x, cfg_.lstm_layers * cfg_.lstm_hidden},
            nn::Act::tanh, nn::Act::tanh, rng);
        c.lstm_c0 = nn::DenseStack::create(
            store_, "lstm_c0", {cfg_.d_x, cfg_.lstm_layers * cfg_.lstm_hidden},
            nn::Act::tanh, nn::Act::tanh, rng);
        c.lstm_out = nn::DenseStack::create(store_, "lstm_out",
                                            {cfg_.lstm_hidden, cfg_.d_x},
                                            nn::Act::tanh, nn::Act::identity, rng);
    } else {
        // Identical creation order for sde and ode so both kinds share one
        // parameter layout and the zero-diffusion degeneracy is exact.
        c.drift_prior = nn::DenseStack::create(store_, "drift_prior",
                                               {cfg_.d_x + du, h, h, cfg_.d_x},
                                               nn::Act::tanh, nn::Act::identity, rng);
        c.diffusion = nn::DenseStack::create(store_, "diffusion",
                                             {cfg_.d_x + du, h, cfg_.d_x},
                                             nn::Act::tanh, nn::Act::softplus, rng);
        c.drift_post = nn::DenseStack::create(
            store_, "drift_post", {cfg_.d_x + du + cfg_.enc_hidden, h, h, cfg_.d_x},
            nn::Act::tanh, nn::Act::identity, rng);
    }

    for (const auto& spec : cfg_.vars) {
        std::size_t out = spec.head == HeadKind::gaussian ? 2
                          : spec.head == HeadKind::poisson ? 1
                                                           : spec.classes;
        c.heads.push_back(nn::DenseStack::create(store_, "head:" + spec.name,
                                                 {cfg_.d_x, out}, nn::Act::identity,
                                                 nn::Act::identity, rng));
    }
    if (cfg_.latent_readout)
        c.readout = nn::DenseStack::create(store_, "readout", {cfg_.d_x, 2},
                                           nn::Act::identity, nn::Act::identity, rng);

    c.offsets.resize(store_.count());
    std::size_t off = 0;
    for (std::size_t s = 0; s < store_.count(); ++s) {
        c.offsets[s] = off;
        off += store_.values(static_cast<int>(s)).size();
    }
}

LatentModel::LatentModel(ModelConfig cfg) : cfg_(std::move(cfg)) { build_components(); }
LatentModel::~LatentModel() = default;
LatentModel::LatentModel(LatentModel&&) noexcept = default;
LatentModel& LatentModel::operator=(LatentModel&&) noexcept = default;

namespace {

// Per-step encoder inputs: masked z-scored values, masks, time delta,
// covariates. Masked entries enter as zeros and the mask channel says so.
std::vector<NodeId> encoder_inputs(Tape& tape, const Task& task,
                                   const ModelConfig& cfg) {
    std::size_t n = task.times.size();
    std::size_t v = cfg.vars.size();
    std::vector<NodeId> inputs;
    inputs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x;
        x.reserve(2 * v + 1 + task.covariates.size());
        for (std::size_t j = 0; j < v; ++j)
            x.push_back(task.masks[j][i] ? task.enc_values[j][i] : 0.0);
        for (std::size_t j = 0; j < v; ++j)
            x.push_back(task.masks[j][i] ? 1.0 : 0.0);
        x.push_back(i == 0 ? task.times[0] : task.times[i] - task.times[i - 1]);
        for (double cvar : task.covariates) x.push_back(cvar);
        inputs.push_back(tape.leaf(Tensor::vec(std::move(x))));
    }
    return inputs;
}

Ctx encode_context(nn::Binding& bind, const std::vector<nn::GruCell>& cells,
                   const std::vector<NodeId>& inputs, const std::vector<bool>& observed,
                   const std::vector<double>& times) {
    std::vector<NodeId> rev_in(inputs.rbegin(), inputs.rend());
    std::vector<bool> rev_obs(observed.rbegin(), observed.rend());
    auto out = nn::recurrent_scan(bind, cells, rev_in, rev_obs);
    Ctx ctx;
    std::size_t n = inputs.size();
    for (std::size_t j = n; j-- > 0;) {
        std::size_t i = n - 1 - j;  // original index for reversed position j
        if (observed[i]) {
            ctx.times.push_back(times[i]);
            ctx.knots.push_back(out[j]);
        }
    }
    if (ctx.knots.empty()) throw std::runtime_error("no observed points to encode");
    return ctx;
}

std::pair<NodeId, NodeId> encode_initial(nn::Binding& bind,
                                         const std::vector<nn::GruCell>& cells,
                                         const nn::DenseStack& head,
                                         const std::vector<NodeId>& inputs,
                                         const std::vector<bool>& observed,
                                         const ModelConfig& cfg) {
    std::size_t n_obs = static_cast<std::size_t>(
        std::count(observed.begin(), observed.end(), true));
    if (n_obs == 0) throw std::runtime_error("no observed points to encode");
    auto prefix = static_cast<std::size_t>(
        std::ceil(cfg.prefix_fraction * static_cast<double>(n_obs)));
    prefix = std::max<std::size_t>(prefix, 1);

    std::vector<bool> pre_obs(observed.size(), false);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < observed.size() && seen < prefix; ++i)
        if (observed[i]) {
            pre_obs[i] = true;
            ++seen;
        }
    auto out = nn::recurrent_scan(bind, cells, inputs, pre_obs);
    Tape& tape = bind.tape();
    NodeId raw = head.apply(bind, out.back());
    NodeId mean = tape.slice(raw, 0, cfg.d_x);
    NodeId stdv = tape.add_const(tape.softplus(tape.slice(raw, cfg.d_x, cfg.d_x)), 1e-6);
    return {mean, stdv};
}

NodeId with_control(Tape& tape, NodeId x, NodeId u, std::size_t d_u) {
    if (d_u == 0) return x;
    NodeId parts[] = {x, u};
    return tape.concat(parts);
}

// Discrete-time latent advance: one stacked-LSTM update per stamp, with
// the control value, held context and the time delta as step inputs.
Roll lstm_rollout(const ModelConfig& cfg, const LatentModel::Components& c,
                  nn::Binding& bind, NodeId x0, const Ctx& ctx,
                  const sde::ControlSignal& control,
                  const std::vector<double>& stamps) {
    Tape& tape = bind.tape();
    NodeId h_all = c.lstm_h0.apply(bind, x0);
    NodeId c_all = c.lstm_c0.apply(bind, x0);
    std::vector<NodeId> hs, cs;
    for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
        hs.push_back(tape.slice(h_all, l * cfg.lstm_hidden, cfg.lstm_hidden));
        cs.push_back(tape.slice(c_all, l * cfg.lstm_hidden, cfg.lstm_hidden));
    }
    Roll roll;
    roll.times.push_back(0.0);
    roll.states.push_back(x0);
    double prev = 0.0;
    for (double t : stamps) {
        NodeId dt_node = tape.leaf(Tensor::scalar(t - prev));
        NodeId x;
        if (cfg.d_u > 0) {
            NodeId u = tape.leaf(Tensor::vec(sde::query_control(control, t)));
            NodeId parts[] = {u, ctx.query(t), dt_node};
            x = tape.concat(parts);
        } else {
            NodeId parts[] = {ctx.query(t), dt_node};
            x = tape.concat(parts);
        }
        for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
            auto [h, cc] = c.lstm[l].step(bind, x, hs[l], cs[l]);
            hs[l] = h;
            cs[l] = cc;
            x = h;
        }
        roll.times.push_back(t);
        roll.states.push_back(c.lstm_out.apply(bind, hs.back()));
        prev = t;
    }
    return roll;
}

}  // namespace

ElboParts LatentModel::elbo(const Task& task, std::uint64_t noise_seed, double beta,
                            std::vector<double>* grad_flat) const {
    const auto& c = *comp_;
    Tape tape;
    nn::Binding bind(tape, store_);

    auto inputs = encoder_inputs(tape, task, cfg_);
    auto observed = observed_steps(task);
    Ctx ctx = encode_context(bind, c.enc_bw, inputs, observed, task.times);
    auto [q_mean, q_std] =
        encode_initial(bind, c.enc_fw, c.init_head, inputs, observed, cfg_);

    std::mt19937_64 rng(splitmix64(noise_seed));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> eps(cfg_.d_x);
    for (auto& e : eps) e = nd(rng);
    NodeId x0 = tape.add(q_mean, tape.mul(q_std, tape.leaf(Tensor::vec(eps))));

    // KL(Q_0 || P_0), both diagonal Gaussians; P_0 is learned.
    NodeId p_m = bind[c.p0_mean];
    NodeId p_ls = bind[c.p0_logstd];
    NodeId log_s = tape.log(q_std);
    NodeId num = tape.add(tape.square(q_std), tape.square(tape.sub(q_mean, p_m)));
    NodeId ratio = tape.div(num, tape.scale(tape.exp(tape.scale(p_ls, 2.0)), 2.0));
    NodeId kl0 = tape.sum(tape.add_const(tape.add(tape.sub(p_ls, log_s), ratio), -0.5));

    std::size_t du = cfg_.d_u;
    Roll roll;
    NodeId path_kl = -1;
    if (cfg_.kind == ModelKind::lstm) {
        std::vector<double> stamps;
        for (std::size_t i = 0; i < task.times.size(); ++i)
            if (observed[i]) stamps.push_back(task.times[i]);
        roll = lstm_rollout(cfg_, c, bind, x0, ctx, task.control, stamps);
    } else {
        auto grid = sde::TimeGrid::from_range(0.0, task.obs_end, cfg_.dt);
        sde::FieldFn post = [&](Tape& t, NodeId x, NodeId u, double tt) {
            NodeId parts[] = {with_control(t, x, u, du), ctx.query(tt)};
            return c.drift_post.apply(bind, t.concat(parts));
        };
        sde::FieldFn prior = [&](Tape& t, NodeId x, NodeId u, double) {
            return c.drift_prior.apply(bind, with_control(t, x, u, du));
        };
        sde::FieldFn diff = [&](Tape& t, NodeId x, NodeId u, double) {
            return t.clamp_min(c.diffusion.apply(bind, with_control(t, x, u, du)),
                               cfg_.sigma_floor);
        };
        sde::LatentPath path;
        if (cfg_.kind == ModelKind::sde) {
            auto noise = sde::sample_wiener(grid, cfg_.d_x, mix(noise_seed, 0xB02));
            path = sde::integrate_em(tape, post, diff, x0, task.control, grid, noise);
            path_kl = sde::girsanov_kl(tape, post, prior, diff, path, task.control);
        } else {
            path = sde::integrate_euler(tape, post, x0, task.control, grid);
        }
        roll.times.reserve(path.states.size());
        for (std::size_t k = 0; k < path.states.size(); ++k)
            roll.times.push_back(grid.time_at(k));
        roll.states = path.states;
    }

    NodeId recon = tape.leaf(Tensor::scalar(0.0));
    for (std::size_t j = 0; j < cfg_.vars.size(); ++j) {
        const auto& spec = cfg_.vars[j];
        for (std::size_t i = 0; i < task.times.size(); ++i) {
            if (!task.masks[j][i]) continue;
            NodeId state = roll.at(task.times[i]);
            NodeId out = c.heads[j].apply(bind, state);
            NodeId ll;
            if (spec.head == HeadKind::gaussian) {
                double y = task.enc_values[j][i];
                NodeId mu = tape.index(out, 0);
                NodeId sg = tape.add_const(tape.softplus(tape.index(out, 1)), 1e-6);
                NodeId z = tape.div(tape.add_const(tape.neg(mu), y), sg);
                ll = tape.add_const(
                    tape.sub(tape.scale(tape.square(z), -0.5), tape.log(sg)),
                    -kHalfLog2Pi);
            } else if (spec.head == HeadKind::poisson) {
                double y = task.values[j][i];
                NodeId lam = tape.clamp_min(tape.softplus(tape.index(out, 0)), 1e-10);
                ll = tape.add_const(tape.sub(tape.scale(tape.log(lam), y), lam),
                                    -std::lgamma(y + 1.0));
            } else {
                auto k = static_cast<std::size_t>(std::llround(task.values[j][i]));
                if (k >= spec.classes)
                    throw std::runtime_error("class label out of range in " + spec.name);
                ll = tape.sub(tape.index(out, k), tape.logsumexp(out));
            }
            recon = tape.add(recon, ll);
        }
    }

    // Supervised probe on ground-truth latents; detached so it cannot
    // steer the generative model.
    NodeId readout_nll = -1;
    if (cfg_.latent_readout && !task.truth_times.empty()) {
        readout_nll = tape.leaf(Tensor::scalar(0.0));
        for (std::size_t i = 0; i < task.truth_times.size(); ++i) {
            double t = task.truth_times[i];
            if (t > task.obs_end + 1e-9) continue;
            NodeId state = tape.detach(roll.at(t));
            NodeId out = c.readout.apply(bind, state);
            NodeId mu = tape.index(out, 0);
            NodeId sg = tape.add_const(tape.softplus(tape.index(out, 1)), 1e-6);
            NodeId z = tape.div(tape.add_const(tape.neg(mu), task.truth_values[i]), sg);
            NodeId nll = tape.add_const(
                tape.add(tape.scale(tape.square(z), 0.5), tape.log(sg)), kHalfLog2Pi);
            readout_nll = tape.add(readout_nll, nll);
        }
    }

    NodeId kl_total = path_kl >= 0 ? tape.add(kl0, path_kl) : kl0;
    NodeId loss = tape.add(tape.neg(recon), tape.scale(kl_total, beta));
    if (readout_nll >= 0) loss = tape.add(loss, readout_nll);

    ElboParts parts;
    parts.recon = tape.value(recon).item();
    parts.kl0 = tape.value(kl0).item();
    parts.path_kl = path_kl >= 0 ? tape.value(path_kl).item() : 0.0;
    parts.readout_nll = readout_nll >= 0 ? tape.value(readout_nll).item() : 0.0;

    if (grad_flat) {
        if (grad_flat->size() != store_.total_size())
            throw std::runtime_error("gradient buffer size mismatch");
        tape.backward(loss);
        tape.visit_param_grads([&](int slot, const Tensor& g) {
            std::size_t off = c.offsets[static_cast<std::size_t>(slot)];
            for (std::size_t i = 0; i < g.size(); ++i) (*grad_flat)[off + i] += g.at(i);
        });
    }
    return parts;
}

Forecast LatentModel::forecast(const Task& task, const std::vector<double>& decode_times,
                               std::size_t n_samples, std::uint64_t seed) const {
    const auto& c = *comp_;
    if (n_samples < 1) throw std::runtime_error("forecast: n_samples >= 1");
    for (double t : decode_times)
        if (t < -1e-9 || t > 1.0 + 1e-9)
            throw std::runtime_error("forecast: decode time outside grid");

    // Observation heads plus, when trained, the latent tumor-volume probe.
    struct DecSpec {
        std::string name;
        HeadKind head;
        std::size_t classes;
        bool readout;
    };
    std::vector<DecSpec> specs;
    for (const auto& v : cfg_.vars) specs.push_back({v.name, v.head, v.classes, false});
    if (cfg_.latent_readout)
        specs.push_back({"tumor_volume", HeadKind::gaussian, 0, true});

    std::size_t nv = specs.size();
    std::size_t nt = decode_times.size();
    // per var, per time, per sample
    std::vector<std::vector<std::vector<double>>> centers(nv), sigmas(nv), draws(nv);
    std::vector<std::vector<std::vector<double>>> probs(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        centers[j].assign(nt, {});
        sigmas[j].assign(nt, {});
        draws[j].assign(nt, {});
        if (specs[j].head == HeadKind::categorical)
            probs[j].assign(nt, std::vector<double>(specs[j].classes, 0.0));
    }

    std::size_t du = cfg_.d_u;
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::uint64_t sseed = mix(seed, 0xF0 + s);
        Tape tape;
        nn::Binding bind(tape, store_);
        auto inputs = encoder_inputs(tape, task, cfg_);
        auto observed = observed_steps(task);
        Ctx ctx = encode_context(bind, c.enc_bw, inputs, observed, task.times);
        auto [q_mean, q_std] =
            encode_initial(bind, c.enc_fw, c.init_head, inputs, observed, cfg_);

        std::mt19937_64 rng(splitmix64(sseed));
        std::normal_distribution<double> nd(0.0, 1.0);
        std::vector<double> eps(cfg_.d_x);
        for (auto& e : eps) e = nd(rng);
        NodeId x0 = tape.add(q_mean, tape.mul(q_std, tape.leaf(Tensor::vec(eps))));

        Roll roll;
        if (cfg_.kind == ModelKind::lstm) {
            std::vector<double> stamps;
            for (std::size_t i = 0; i < task.times.size(); ++i)
                if (observed[i] && task.times[i] <= task.obs_end + 1e-9)
                    stamps.push_back(task.times[i]);
            for (double t : decode_times) stamps.push_back(t);
            std::sort(stamps.begin(), stamps.end());
            stamps.erase(std::unique(stamps.begin(), stamps.end(),
                                     [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                         stamps.end());
            roll = lstm_rollout(cfg_, c, bind, x0, ctx, task.control, stamps);
        } else {
            sde::FieldFn post = [&](Tape& t, NodeId x, NodeId u, double tt) {
                NodeId parts[] = {with_control(t, x, u, du), ctx.query(tt)};
                return c.drift_post.apply(bind, t.concat(parts));
            };
            sde::FieldFn prior = [&](Tape& t, NodeId x, NodeId u, double) {
                return c.drift_prior.apply(bind, with_control(t, x, u, du));
            };
            sde::FieldFn diff = [&](Tape& t, NodeId x, NodeId u, double) {
                return t.clamp_min(c.diffusion.apply(bind, with_control(t, x, u, du)),
                                   cfg_.sigma_floor);
            };
            auto grid1 = sde::TimeGrid::from_range(0.0, task.obs_end, cfg_.dt);
            sde::LatentPath obs_path;
            if (cfg_.kind == ModelKind::sde) {
                auto noise = sde::sample_wiener(grid1, cfg_.d_x, mix(sseed, 0xA1));
                obs_path = sde::integrate_em(tape, post, diff, x0, task.control,
                                             grid1, noise);
            } else {
                obs_path = sde::integrate_euler(tape, post, x0, task.control, grid1);
            }
            for (std::size_t k = 0; k < obs_path.states.size(); ++k) {
                roll.times.push_back(grid1.time_at(k));
                roll.states.push_back(obs_path.states[k]);
            }
            if (task.obs_end < 1.0 - 1e-12) {
                auto grid2 = sde::TimeGrid::from_range(task.obs_end, 1.0, cfg_.dt);
                sde::LatentPath fut;
                if (cfg_.kind == ModelKind::sde) {
                    // Generative continuation: prior drift, learned diffusion.
                    auto noise = sde::sample_wiener(grid2, cfg_.d_x, mix(sseed, 0xA2));
                    fut = sde::integrate_em(tape, prior, diff, roll.states.back(),
                                            task.control, grid2, noise);
                } else {
                    // Deterministic continuation under the posterior drift;
                    // the context signal holds its final knot.
                    fut = sde::integrate_euler(tape, post, roll.states.back(),
                                               task.control, grid2);
                }
                for (std::size_t k = 1; k < fut.states.size(); ++k) {
                    roll.times.push_back(grid2.time_at(k));
                    roll.states.push_back(fut.states[k]);
                }
            }
        }

        for (std::size_t j = 0; j < nv; ++j) {
            const auto& spec = specs[j];
            const std::string& vn = spec.name;
            for (std::size_t ti = 0; ti < nt; ++ti) {
                NodeId state = roll.at(decode_times[ti]);
                NodeId out = spec.readout ? c.readout.apply(bind, state)
                                          : c.heads[j].apply(bind, state);
                const Tensor& o = tape.value(out);
                if (spec.head == HeadKind::gaussian) {
                    double mu = o.at(0);
                    double sg = std::log1p(std::exp(std::min(o.at(1), 30.0)));
                    if (o.at(1) > 30.0) sg = o.at(1);
                    sg += 1e-6;
                    if (norm_stats.has(vn)) {  // z-space head -> raw units
                        double sd = norm_stats.by_var.at(vn).second;
                        mu = norm_stats.denormalize(vn, mu);
                        sg *= sd;
                    }
                    centers[j][ti].push_back(mu);
                    sigmas[j][ti].push_back(sg);
                    draws[j][ti].push_back(mu + sg * nd(rng));
                } else if (spec.head == HeadKind::poisson) {
                    double lam = std::log1p(std::exp(std::min(o.at(0), 30.0)));
                    if (o.at(0) > 30.0) lam = o.at(0);
                    lam = std::max(lam, 1e-10);
                    centers[j][ti].push_back(lam);
                    sigmas[j][ti].push_back(std::sqrt(lam));
                    draws[j][ti].push_back(static_cast<double>(
                        std::poisson_distribution<long>(lam)(rng)));
                } else {
                    double mx = *std::max_element(o.data.begin(), o.data.end());
                    double zsum = 0.0;
                    std::vector<double> p(o.size());
                    for (std::size_t k = 0; k < o.size(); ++k) {
                        p[k] = std::exp(o.at(k) - mx);
                        zsum += p[k];
                    }
                    double expc = 0.0;
                    for (std::size_t k = 0; k < o.size(); ++k) {
                        p[k] /= zsum;
                        probs[j][ti][k] += p[k];
                        expc += static_cast<double>(k) * p[k];
                    }
                    centers[j][ti].push_back(expc);
                    sigmas[j][ti].push_back(0.0);
                    double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                    std::size_t k = 0;
                    for (double acc = p[0]; k + 1 < p.size() && r > acc; acc += p[++k]) {}
                    draws[j][ti].push_back(static_cast<double>(k));
                }
            }
        }
    }

    Forecast fc;
    for (std::size_t j = 0; j < nv; ++j) {
        VarForecast vf;
        vf.name = specs[j].name;
        vf.times = decode_times;
        bool categorical = specs[j].head == HeadKind::categorical;
        bool poisson = specs[j].head == HeadKind::poisson;
        for (std::size_t ti = 0; ti < nt; ++ti) {
            double m = mean_of(centers[j][ti]);
            double between = var_of(centers[j][ti], m);
            double within = 0.0;
            for (double sg : sigmas[j][ti]) within += sg * sg;
            within /= static_cast<double>(sigmas[j][ti].size());
            vf.mean.push_back(m);
            vf.sd.push_back(std::sqrt(between + within));
            // Quantiles over per-path centers, widened to bracket the mean.
            vf.q025.push_back(std::min(quantile(centers[j][ti], 0.025), m));
            vf.q975.push_back(std::max(quantile(centers[j][ti], 0.975), m));
            vf.samples.push_back(draws[j][ti]);
            if (categorical) {
                auto& pr = probs[j][ti];
                for (auto& p : pr) p /= static_cast<double>(n_samples);
                vf.class_probs.push_back(pr);
            }
            if (poisson) vf.lambda_mean.push_back(m);
        }
        fc.vars.push_back(std::move(vf));
    }
    return fc;
}

ModelConfig default_config(const data::Dataset& ds, ModelKind kind) {
    ModelConfig cfg;
    cfg.kind = kind;
    if (ds.meta.kind == "pkpd") {
        cfg.vars = {{"cell_count", HeadKind::poisson, 0},
                    {"ecog", HeadKind::categorical, 6}};
        cfg.covariate_names = {"age", "weight", "height", "gender",
                               "tumor_type", "bmi", "bsa"};
        cfg.d_u = 2;  // chemo, radio pulse channels
        cfg.latent_readout = true;
    } else if (ds.meta.kind == "icu") {
        cfg.vars = {{"BT", HeadKind::gaussian, 0},
                    {"HR", HeadKind::gaussian, 0},
                    {"MAP", HeadKind::gaussian, 0}};
        cfg.covariate_names = {"age", "gender", "height"};
        cfg.d_u = 0;
    } else {
        if (ds.records.empty())
            throw std::runtime_error("cannot infer config from empty dataset");
        for (const auto& v : ds.records.front().variables)
            cfg.vars.push_back({v, HeadKind::gaussian, 0});
        cfg.d_u = 0;
    }
    return cfg;
}

Task build_task(const data::PatientRecord& rec, const data::DatasetMeta& meta,
                const data::NormStats& stats, const ModelConfig& cfg,
                bool forecast_mode) {
    if (meta.horizon <= 0.0) throw std::runtime_error("dataset meta lacks horizon");
    Task task;
    task.id = rec.id;
    double H = meta.horizon;
    for (double t : rec.obs_times) {
        double tn = t / H;
        if (tn < -1e-9 || tn > 1.0 + 1e-9)
            throw std::runtime_error("observation outside horizon in " + rec.id);
        if (!task.times.empty() && tn <= task.times.back())
            throw std::runtime_error("observation times not increasing in " + rec.id);
        task.times.push_back(tn);
    }

    if (forecast_mode) {
        auto k = std::llround(meta.split_time / H / cfg.dt);
        task.obs_end = static_cast<double>(k) * cfg.dt;
    } else {
        task.obs_end = 1.0;
    }

    for (const auto& spec : cfg.vars) {
        auto it = std::find(rec.variables.begin(), rec.variables.end(), spec.name);
        if (it == rec.variables.end())
            throw std::runtime_error("record " + rec.id + " lacks variable " + spec.name);
        auto vi = static_cast<std::size_t>(it - rec.variables.begin());
        std::vector<double> raw = rec.values[vi];
        std::vector<double> enc(raw.size(), 0.0);
        std::vector<bool> mask(raw.size(), false);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            bool m = rec.masks[vi][i] != 0;
            if (forecast_mode && task.times[i] > task.obs_end + 1e-9) m = false;
            mask[i] = m;
            if (m) enc[i] = stats.has(spec.name) ? stats.normalize(spec.name, raw[i])
                                                 : raw[i];
        }
        task.values.push_back(std::move(raw));
        task.enc_values.push_back(std::move(enc));
        task.masks.push_back(std::move(mask));
    }

    bool any = false;
    for (const auto& m : task.masks)
        for (bool b : m) any = any || b;
    if (!any) throw std::runtime_error("record " + rec.id + " has no visible observations");

    for (const auto& name : cfg.covariate_names) {
        auto it = rec.covariates.find(name);
        std::string key = "cov:" + name;
        if (it == rec.covariates.end()) {
            task.covariates.push_back(0.0);  // missing -> normalized mean
        } else if (stats.has(key)) {
            task.covariates.push_back(stats.normalize(key, it->second));
        } else {
            task.covariates.push_back(it->second);
        }
    }

    task.control.dim = cfg.d_u;
    if (cfg.d_u == 2) {
        // Dose channels as one-week-wide unit pulses on normalized time.
        std::set<double> bps;
        for (double t : rec.chemo_times) {
            bps.insert(t);
            if (t + 1.0 < H) bps.insert(t + 1.0);
        }
        for (double t : rec.radio_times) {
            bps.insert(t);
            if (t + 1.0 < H) bps.insert(t + 1.0);
        }
        auto active = [](const std::vector<double>& doses, double t) {
            for (double d : doses)
                if (t >= d - 1e-9 && t < d + 1.0 - 1e-9) return 1.0;
            return 0.0;
        };
        for (double bp : bps)
            task.control.add_event(bp / H, {active(rec.chemo_times, bp),
                                            active(rec.radio_times, bp)});
    }

    if (cfg.latent_readout) {
        for (std::size_t i = 0; i < rec.truth_grid.size(); ++i) {
            task.truth_times.push_back(rec.truth_grid[i] / H);
            task.truth_values.push_back(rec.truth_tumor_volume[i]);
        }
    }
    return task;
}

void LatentModel::save(const std::string& path) const {
    json j;
    j["schema_version"] = 1;
    json cfgj;
    cfgj["kind"] = to_string(cfg_.kind);
    cfgj["d_x"] = cfg_.d_x;
    cfgj["d_u"] = cfg_.d_u;
    cfgj["enc_hidden"] = cfg_.enc_hidden;
    cfgj["enc_layers"] = cfg_.enc_layers;
    cfgj["drift_hidden"] = cfg_.drift_hidden;
    cfgj["lstm_hidden"] = cfg_.lstm_hidden;
    cfgj["lstm_layers"] = cfg_.lstm_layers;
    cfgj["dt"] = cfg_.dt;
    cfgj["sigma_floor"] = cfg_.sigma_floor;
    cfgj["prefix_fraction"] = cfg_.prefix_fraction;
    cfgj["latent_readout"] = cfg_.latent_readout;
    cfgj["init_seed"] = cfg_.init_seed;
    json varsj = json::array();
    for (const auto& v : cfg_.vars)
        varsj.push_back({{"name", v.name},
                         {"head", head_name(v.head)},
                         {"classes", v.classes}});
    cfgj["vars"] = varsj;
    cfgj["covariate_names"] = cfg_.covariate_names;
    j["config"] = cfgj;

    json pj = json::object();
    for (std::size_t s = 0; s < store_.count(); ++s) {
        const Tensor& t = store_.values(static_cast<int>(s));
        pj[store_.name(static_cast<int>(s))] = {{"shape", t.shape}, {"data", t.data}};
    }
    j["params"] = pj;

    json nj = json::object();
    for (const auto& [name, ms] : norm_stats.by_var) nj[name] = {ms.first, ms.second};
    j["norm_stats"] = nj;
    j["rng_state"] = rng_state;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(1) << "\n";
}

LatentModel LatentModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    json j = json::parse(in);
    if (j.at("schema_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint schema in " + path);
    const json& cfgj = j.at("config");
    ModelConfig cfg;
    cfg.kind = kind_from_string(cfgj.at("kind").get<std::string>());
    cfg.d_x = cfgj.at("d_x").get<std::size_t>();
    cfg.d_u = cfgj.at("d_u").get<std::size_t>();
    cfg.enc_hidden = cfgj.at("enc_hidden").get<std::size_t>();
    cfg.enc_layers = cfgj.at("enc_layers").get<std::size_t>();
    cfg.drift_hidden = cfgj.at("drift_hidden").get<std::size_t>();
    cfg.lstm_hidden = cfgj.at("lstm_hidden").get<std::size_t>();
    cfg.lstm_layers = cfgj.at("lstm_layers").get<std::size_t>();
    cfg.dt = cfgj.at("dt").get<double>();
    cfg.sigma_floor = cfgj.at("sigma_floor").get<double>();
    cfg.prefix_fraction = cfgj.at("prefix_fraction").get<double>();
    cfg.latent_readout = cfgj.at("latent_readout").get<bool>();
    cfg.init_seed = cfgj.at("init_seed").get<std::uint64_t>();
    for (const auto& v : cfgj.at("vars"))
        cfg.vars.push_back({v.at("name").get<std::string>(),
                            head_from_string(v.at("head").get<std::string>()),
                            v.at("classes").get<std::size_t>()});
    cfg.covariate_names = cfgj.at("covariate_names").get<std::vector<std::string>>();

    LatentModel model(cfg);
    for (const auto& [name, pv] : j.at("params").items()) {
        int slot = model.store_.find(name);
        if (slot < 0) throw std::runtime_error("unknown parameter in checkpoint: " + name);
        Tensor& t = model.store_.values(slot);
        auto data = pv.at("data").get<std::vector<double>>();
        if (data.size() != t.size())
            throw std::runtime_error("parameter size mismatch for " + name);
        t.data = std::move(data);
    }
    for (const auto& [name, ms] : j.at("norm_stats").items())
        model.norm_stats.by_var[name] = {ms.at(0).get<double>(), ms.at(1).get<double>()};
    model.rng_state = j.at("rng_state").get<std::string>();
    return model;
}

}  // namespace lsde::model
