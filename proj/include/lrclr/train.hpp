#pragma once

// Adam and the single-threaded, seed-deterministic training loop.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lrclr/model.hpp"

namespace lrclr {

class Adam {
  public:
    Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad()) continue;
            auto w = p.mutable_data();
            auto g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
            }
        }
    }

    std::uint64_t steps_taken() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
};

struct StepLog {
    std::size_t step = 0;
    double global = 0.0;
    double local = 0.0;
    double total = 0.0;
};

// Tab-separated: step, L_global, L_local, L_total.
inline void write_log_line(std::ostream& os, const StepLog& s) {
    os << s.step << '\t' << detail::format_real(s.global) << '\t' << detail::format_real(s.local) << '\t'
       << detail::format_real(s.total) << '\n';
}

// Thrown when a step produces a non-finite loss. The model still holds the
// parameters from before that step.
class TrainingDiverged : public NumericalError {
  public:
    TrainingDiverged(std::size_t step, const std::string& what)
        : NumericalError("non-finite loss at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const { return step_; }

  private:
    std::size_t step_;
};

class Trainer {
  public:
    explicit Trainer(const RunConfig& cfg)
        : cfg_(cfg),
          model_(initial_model(cfg)),
          optimizer_(parameter_handles(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon),
          rng_(mix_seed(cfg.seed, 0xBA7C4)) {}

    // Runs cfg.steps steps over the given pairs. Batches are consecutive
    // slices of a per-epoch seeded shuffle. log_sink, when given, receives
    // one line per step.
    void run(const std::vector<SyntheticPair>& pairs, std::ostream* log_sink = nullptr) {
        if (pairs.size() < cfg_.batch_size) {
            throw ConfigError("training set has " + std::to_string(pairs.size()) + " pairs, fewer than batch_size " +
                              std::to_string(cfg_.batch_size));
        }
        const ForwardOptions opts = ForwardOptions::from(cfg_);
        std::vector<std::size_t> order(pairs.size());
        std::size_t cursor = order.size();
        std::vector<const SyntheticPair*> batch(cfg_.batch_size);

        for (std::size_t s = 0; s < cfg_.steps; ++s) {
            for (auto& slot : batch) {
                if (cursor == order.size()) {
                    std::iota(order.begin(), order.end(), std::size_t{0});
                    std::shuffle(order.begin(), order.end(), rng_);
                    cursor = 0;
                }
                slot = &pairs[order[cursor++]];
            }
            step_on(batch, opts, log_sink);
        }
    }

    // One optimisation step on an explicit batch.
    StepLog step_on(std::span<const SyntheticPair* const> batch, const ForwardOptions& opts,
                    std::ostream* log_sink = nullptr) {
        Tape tape;
        const BatchForward fwd = forward_batch(tape, model_, batch, opts);
        StepLog entry{step_, fwd.loss.global.item(), fwd.loss.local.item(), fwd.loss.total.item()};
        if (!std::isfinite(entry.total) || !std::isfinite(entry.global) || !std::isfinite(entry.local)) {
            throw TrainingDiverged(step_, "L_total = " + detail::format_real(entry.total));
        }
        model_.zero_grad();
        tape.backward(fwd.loss.total);
        optimizer_.step();
        log_.push_back(entry);
        if (log_sink) write_log_line(*log_sink, entry);
        ++step_;
        return entry;
    }

    const LrclrModel& model() const { return model_; }
    LrclrModel& model() { return model_; }
    const RunConfig& config() const { return cfg_; }
    const std::vector<StepLog>& log() const { return log_; }
    std::size_t step() const { return step_; }

  private:
    static LrclrModel initial_model(const RunConfig& cfg) {
        cfg.validate();
        LrclrModel m(cfg);
        m.initialize(cfg.seed, cfg.init_std);
        return m;
    }

    std::vector<Tensor> parameter_handles() {
        std::vector<Tensor> out;
        for (auto& [name, p] : model_.named_parameters()) out.push_back(p);
        return out;
    }

    RunConfig cfg_;
    LrclrModel model_;
    Adam optimizer_;
    std::mt19937_64 rng_;
    std::vector<StepLog> log_;
    std::size_t step_ = 0;
};

}  // namespace lrclr
