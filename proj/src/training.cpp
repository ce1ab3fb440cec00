#include "nledn/training.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "nledn/checkpoint.hpp"

namespace fs = std::filesystem;

namespace nledn {

void TrainConfig::validate() const {
    if (!(lr_floor > 0) || !(lr_floor <= lr_init)) {
        throw Error("train config: need 0 < lr_floor <= lr_init");
    }
    if (!(lr_decay_factor > 0) || !(lr_decay_factor < 1)) {
        throw Error("train config: lr_decay_factor must be in (0,1)");
    }
    if (batch_size != 1) {
        throw Error("train config: batch_size is fixed at 1 (feature maps carry no batch dim)");
    }
    if (plateau_patience < 1) throw Error("train config: plateau_patience must be >= 1");
    if (max_steps < 0) throw Error("train config: max_steps must be >= 0");
    if (!(ema_decay > 0) || !(ema_decay < 1)) {
        throw Error("train config: ema_decay must be in (0,1)");
    }
}

double PlateauSchedule::observe(double loss) {
    if (!started) {
        started = true;
        ema = loss;
        best = ema;
        counter = 1;
    } else {
        ema = decay_ * ema + (1.0 - decay_) * loss;
        if (ema < best) {
            best = ema;
            counter = 0;
        } else {
            ++counter;
        }
    }
    if (counter >= patience_) {
        lr_ = std::max(lr_ * factor_, floor_);
        counter = 0;
        best = ema;
    }
    return lr_;
}

AdamState AdamState::init_for(const NlednModel& model) {
    AdamState s;
    s.m.reserve(model.num_tensors());
    s.v.reserve(model.num_tensors());
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        s.m.emplace_back(model.tensor(i)->shape);
        s.v.emplace_back(model.tensor(i)->shape);
    }
    return s;
}

void adam_step(NlednModel& model, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg, double lr) {
    if (grads.size() != model.num_tensors()) {
        throw Error("adam_step: gradient list does not match parameter list");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!kernels::all_finite(grads[i])) {
            throw Error("adam_step: non-finite gradient for parameter '" + model.name(i) + "'");
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    const float one_m_b1 = static_cast<float>(1.0 - cfg.beta1);
    const float one_m_b2 = static_cast<float>(1.0 - cfg.beta2);
    const float eps = static_cast<float>(cfg.eps);
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float decay = static_cast<float>(lr * cfg.weight_decay);

    for (std::size_t i = 0; i < grads.size(); ++i) {
        Tensor& p = *model.tensor(i);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        const Tensor& g = grads[i];
        require_same_shape(p, g, "adam_step");
        for (std::int64_t k = 0; k < p.numel(); ++k) {
            p[k] -= decay * p[k];
            m[k] = b1 * m[k] + one_m_b1 * g[k];
            v[k] = b2 * v[k] + one_m_b2 * g[k] * g[k];
            p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
        }
    }
}

namespace {

std::string format_double_exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

double parse_double_exact(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

void save_train_state(const std::string& path, const AdamState& adam,
                      const PlateauSchedule& sched, long step, double lr,
                      const NlednModel& model) {
    TensorBundle b;
    b.scalars.emplace_back("step", std::to_string(step));
    b.scalars.emplace_back("adam_step", std::to_string(adam.step));
    b.scalars.emplace_back("lr", format_double_exact(lr));
    b.scalars.emplace_back("ema", format_double_exact(sched.ema));
    b.scalars.emplace_back("best", format_double_exact(sched.best));
    b.scalars.emplace_back("counter", std::to_string(sched.counter));
    b.scalars.emplace_back("started", sched.started ? "1" : "0");
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        b.tensors.emplace_back("m." + model.name(i), adam.m[i]);
        b.tensors.emplace_back("v." + model.name(i), adam.v[i]);
    }
    save_bundle(b, path);
}

void load_train_state(const std::string& path, AdamState& adam, PlateauSchedule& sched,
                      long& step, const NlednModel& model) {
    const TensorBundle b = load_bundle(path);
    step = std::stol(b.scalar("step"));
    adam.step = std::stol(b.scalar("adam_step"));
    sched.set_lr(parse_double_exact(b.scalar("lr")));
    sched.ema = parse_double_exact(b.scalar("ema"));
    sched.best = parse_double_exact(b.scalar("best"));
    sched.counter = std::stol(b.scalar("counter"));
    sched.started = b.scalar("started") == "1";
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        const Tensor* m = b.find_tensor("m." + model.name(i));
        const Tensor* v = b.find_tensor("v." + model.name(i));
        if (!m || !v) throw Error("train state is missing moments for " + model.name(i));
        adam.m[i] = *m;
        adam.v[i] = *v;
    }
}

}  // namespace

TrainResult train_loop(NlednModel& model, const std::vector<ImagePair>& pairs,
                       const TrainConfig& cfg, const std::string& out_dir, bool resume,
                       const std::function<void(const StepInfo&)>& on_step) {
    cfg.validate();
    if (pairs.empty()) throw Error("train_loop: dataset is empty");
    fs::create_directories(out_dir);

    const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
    const std::string state_path = (fs::path(out_dir) / "model.state").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.tsv").string();

    // geometry once; per-step flips are drawn below
    std::vector<ImagePair> base;
    base.reserve(pairs.size());
    {
        Rng dummy(0);
        for (const auto& p : pairs) base.push_back(prepare(p, false, dummy));
    }
    const std::size_t n = base.size();

    AdamState adam = AdamState::init_for(model);
    PlateauSchedule sched(cfg);
    long start_step = 0;

    if (resume) {
        load_train_state(state_path, adam, sched, start_step, model);
    } else {
        save_checkpoint(model, ckpt_path);
        save_train_state(state_path, adam, sched, 0, sched.lr(), model);
    }

    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("train_loop: cannot write " + log_path);
    if (!resume) log << "step\tloss\tlr\telapsed_s\n";

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    long order_epoch = -1;

    const auto t0 = std::chrono::steady_clock::now();
    double last_loss = 0.0;

    for (long step = start_step + 1; step <= cfg.max_steps; ++step) {
        // deterministic shuffled order, recomputed per epoch so that resume
        // from any step sees the same sequence
        const long epoch = (step - 1) / static_cast<long>(n);
        const std::size_t pos = static_cast<std::size_t>((step - 1) % static_cast<long>(n));
        if (epoch != order_epoch) {
            std::iota(order.begin(), order.end(), 0);
            Rng perm_rng(hash_seed(cfg.seed, 0x6f72646572ULL, static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = n; i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(
                    perm_rng.uniform_int(0, static_cast<int>(i) - 1));
                std::swap(order[i - 1], order[j]);
            }
            order_epoch = epoch;
        }

        Rng step_rng(hash_seed(cfg.seed, 0x617567ULL, static_cast<std::uint64_t>(step)));
        const ImagePair sample = prepare(base[order[pos]], /*train_mode=*/true, step_rng);

        Engine eng;
        std::vector<Var> leaves;
        Var input = eng.leaf(std::make_shared<Tensor>(sample.rainy), false);
        auto out = model.forward(eng, input, nullptr, &leaves);
        Var target = eng.leaf(std::make_shared<Tensor>(sample.clean), false);
        Var loss = mae_loss(eng, out.restored, target);
        last_loss = loss.v()[0];

        if (!std::isfinite(last_loss)) {
            // parameters have not been touched this step; they are the last
            // good state
            save_checkpoint(model, (fs::path(out_dir) / "last_good.ckpt").string());
            throw Error("train_loop: loss became non-finite at step " + std::to_string(step) +
                        "; last-good checkpoint dumped");
        }

        eng.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(leaves.size());
        for (const auto& leaf : leaves) {
            const Tensor* g = eng.grad(leaf);
            grads.push_back(g ? *g : Tensor(leaf.v().shape));
        }

        adam_step(model, grads, adam, cfg, sched.lr());
        sched.observe(last_loss);

        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << step << "\t" << last_loss << "\t" << sched.lr() << "\t" << elapsed << "\n";
        if (on_step) on_step({step, last_loss, sched.lr(), elapsed});

        const bool last = step == cfg.max_steps;
        if (last || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)) {
            save_checkpoint(model, ckpt_path);
            save_train_state(state_path, adam, sched, step, sched.lr(), model);
            log.flush();
        }
    }

    TrainResult result;
    result.steps = std::max(start_step, cfg.max_steps);
    result.final_loss = last_loss;
    result.checkpoint_path = ckpt_path;
    return result;
}

}  // namespace nledn
