#pragma once

// MAE training with Adam (decoupled weight decay), a loss-plateau learning
// rate schedule, periodic checkpointing, and bit-exact resume. One image
// per step; the single training thread owns model and optimizer state.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nledn/data.hpp"
#include "nledn/model.hpp"

namespace nledn {

struct TrainConfig {
    double lr_init = 5e-4;
    double lr_floor = 1e-4;
    double lr_decay_factor = 0.9;  // "reduce by 10%"
    long plateau_patience = 500;   // steps without a new EMA minimum
    double ema_decay = 0.99;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 1;  // fixed by the tensor layout; validated, not varied
    long max_steps = 2000;
    long checkpoint_every = 500;
    std::uint64_t seed = 0;

    void validate() const;
};

// Loss-plateau schedule: tracks an EMA of the per-step loss and multiplies
// the rate by lr_decay_factor (down to lr_floor) whenever `patience` steps
// pass without a new EMA minimum; each decay resets the window.
class PlateauSchedule {
public:
    PlateauSchedule(const TrainConfig& cfg)
        : lr_(cfg.lr_init),
          floor_(cfg.lr_floor),
          factor_(cfg.lr_decay_factor),
          patience_(cfg.plateau_patience),
          decay_(cfg.ema_decay) {}

    double observe(double loss);
    double lr() const { return lr_; }

    // resume plumbing
    double ema = 0.0, best = 0.0;
    long counter = 0;
    bool started = false;
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, floor_, factor_;
    long patience_;
    double decay_;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;

    static AdamState init_for(const NlednModel& model);
};

// Decoupled weight decay (p -= lr*wd*p) followed by the bias-corrected
// Adam update. Gradients are indexed like the model's tensor list; a NaN
// or Inf gradient aborts the step naming the offending parameter.
void adam_step(NlednModel& model, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg, double lr);

struct TrainResult {
    long steps = 0;
    double final_loss = 0.0;
    std::string checkpoint_path;
};

struct StepInfo {
    long step;
    double loss;
    double lr;
    double elapsed_s;
};

// Runs the loop on an in-memory dataset (pairs are geometry-prepared once;
// the per-step horizontal flip is drawn from hash(seed, step)). Writes
// train_log.tsv plus model.ckpt/model.state under out_dir. Pass
// resume=true to continue from those files.
TrainResult train_loop(NlednModel& model, const std::vector<ImagePair>& pairs,
                       const TrainConfig& cfg, const std::string& out_dir, bool resume = false,
                       const std::function<void(const StepInfo&)>& on_step = nullptr);

}  // namespace nledn
