#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"
#include "stemmark/stft.hpp"

namespace stemmark {

inline constexpr std::size_t kNumStems = 2;

struct SeparatorConfig {
    StftConfig stft{1024, 256};
    std::size_t context = 2;   // frames of context on each side
    std::size_t hidden = 128;
};

struct SeparationOutput {
    std::array<AudioBuffer, kNumStems> stems;
    // per-stem masks, [n_frames x n_bins]
    std::array<std::vector<double>, kNumStems> masks;
};

// Ideal ratio mask from reference stems, applied to the mixture with the
// mixture's phase. Controlled stand-in for a trained separator.
inline SeparationOutput oracle_mask_separate(
    const AudioBuffer& mixture,
    const std::array<AudioBuffer, kNumStems>& references,
    const SeparatorConfig& cfg = SeparatorConfig{}) {
    for (const auto& r : references)
        require(r.size() == mixture.size(), ErrorKind::argument,
                "oracle_mask_separate: reference length mismatch");

    Spectrogram mix = stft(mixture, cfg.stft);
    std::array<Spectrogram, kNumStems> refs{stft(references[0], cfg.stft),
                                            stft(references[1], cfg.stft)};
    SeparationOutput out;
    const double eps = 1e-12;
    for (std::size_t s = 0; s < kNumStems; ++s)
        out.masks[s].resize(mix.frames.size());
    for (std::size_t i = 0; i < mix.frames.size(); ++i) {
        double p0 = std::norm(refs[0].frames[i]);
        double p1 = std::norm(refs[1].frames[i]);
        double den = p0 + p1 + eps;
        out.masks[0][i] = p0 / den;
        out.masks[1][i] = p1 / den;
    }
    for (std::size_t s = 0; s < kNumStems; ++s) {
        Spectrogram z = mix;
        for (std::size_t i = 0; i < z.frames.size(); ++i)
            z.frames[i] *= out.masks[s][i];
        out.stems[s] = istft(z, mixture.size());
        out.stems[s].sample_rate = mixture.sample_rate;
    }
    return out;
}

// Per-frame mask MLP: input = log-magnitude features of the frame and
// +/-context neighbours, one hidden tanh layer, sigmoid logits give the
// stem-1 mask; stem-2 mask = 1 - mask1. Parameters live in one flat vector
// so the optimizer, checkpointing, and finite-difference probes stay dumb.
class MlpSeparator {
  public:
    explicit MlpSeparator(const SeparatorConfig& cfg = SeparatorConfig{})
        : cfg_(cfg),
          n_bins_(cfg.stft.fft_size / 2 + 1),
          in_dim_((2 * cfg.context + 1) * n_bins_) {
        params_.assign(n_params(), 0.0);
    }

    static MlpSeparator random_init(const SeparatorConfig& cfg, std::uint64_t seed) {
        MlpSeparator m(cfg);
        Rng rng(seed);
        double s1 = 1.0 / std::sqrt(static_cast<double>(m.in_dim_));
        double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
        std::size_t w1 = cfg.hidden * m.in_dim_;
        std::size_t w2 = m.n_bins_ * cfg.hidden;
        for (std::size_t i = 0; i < w1; ++i) m.params_[i] = s1 * rng.gaussian();
        // b1 zero
        for (std::size_t i = 0; i < w2; ++i)
            m.params_[w1 + cfg.hidden + i] = s2 * rng.gaussian();
        // b2 zero -> masks start at 0.5
        return m;
    }

    const SeparatorConfig& config() const { return cfg_; }
    std::size_t n_bins() const { return n_bins_; }
    std::size_t n_params() const {
        return cfg_.hidden * in_dim_ + cfg_.hidden + n_bins_ * cfg_.hidden + n_bins_;
    }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // cached forward pass over one spectrogram
    struct Forward {
        Eigen::MatrixXd feats;   // [in_dim x n_frames]
        Eigen::MatrixXd hidden;  // tanh activations [hidden x n_frames]
        Eigen::MatrixXd mask1;   // [n_bins x n_frames]
    };

    Forward forward_masks(const Spectrogram& mix) const {
        require(mix.fft_size == cfg_.stft.fft_size && mix.hop == cfg_.stft.hop,
                ErrorKind::argument, "MlpSeparator: stft geometry mismatch");
        std::size_t T = mix.n_frames;
        Forward fw;
        fw.feats.resize(static_cast<Eigen::Index>(in_dim_),
                        static_cast<Eigen::Index>(T));
        int ctx = static_cast<int>(cfg_.context);
        for (std::size_t t = 0; t < T; ++t)
            for (int c = -ctx; c <= ctx; ++c) {
                int tc = std::clamp(static_cast<int>(t) + c, 0,
                                    static_cast<int>(T) - 1);
                for (std::size_t f = 0; f < n_bins_; ++f)
                    fw.feats((c + ctx) * n_bins_ + f, t) =
                        std::log(std::abs(mix.frames[tc * n_bins_ + f]) + kLogEps);
            }

        auto W1 = w1_map();
        auto b1 = b1_map();
        auto W2 = w2_map();
        auto b2 = b2_map();
        fw.hidden = ((W1 * fw.feats).colwise() + b1).array().tanh().matrix();
        Eigen::MatrixXd logits = (W2 * fw.hidden).colwise() + b2;
        fw.mask1 = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
        return fw;
    }

    SeparationOutput separate(const AudioBuffer& mixture) const {
        Spectrogram mix = stft(mixture, cfg_.stft);
        Forward fw = forward_masks(mix);
        SeparationOutput out;
        std::size_t T = mix.n_frames;
        for (std::size_t s = 0; s < kNumStems; ++s) out.masks[s].resize(T * n_bins_);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < n_bins_; ++f) {
                double m1 = fw.mask1(f, t);
                out.masks[0][t * n_bins_ + f] = m1;
                out.masks[1][t * n_bins_ + f] = 1.0 - m1;
            }
        for (std::size_t s = 0; s < kNumStems; ++s) {
            Spectrogram z = mix;
            for (std::size_t i = 0; i < z.frames.size(); ++i)
                z.frames[i] *= out.masks[s][i];
            out.stems[s] = istft(z, mixture.size());
            out.stems[s].sample_rate = mixture.sample_rate;
        }
        return out;
    }

    // Backward through the mask head. dmask1 is dL/dmask1 [n_bins x n_frames];
    // accumulates parameter gradients into grad (same layout as params) and
    // returns dL/dfeats for callers that continue into the mixture.
    Eigen::MatrixXd backward_masks(const Forward& fw, const Eigen::MatrixXd& dmask1,
                                   std::vector<double>& grad) const {
        require(grad.size() == n_params(), ErrorKind::argument,
                "backward_masks: grad size mismatch");
        auto W1 = w1_map();
        auto W2 = w2_map();

        // sigmoid derivative
        Eigen::MatrixXd dlogits =
            (dmask1.array() * fw.mask1.array() * (1.0 - fw.mask1.array())).matrix();
        Eigen::MatrixXd dW2 = dlogits * fw.hidden.transpose();
        Eigen::VectorXd db2 = dlogits.rowwise().sum();
        Eigen::MatrixXd dh = W2.transpose() * dlogits;
        Eigen::MatrixXd dpre =
            (dh.array() * (1.0 - fw.hidden.array().square())).matrix();
        Eigen::MatrixXd dW1 = dpre * fw.feats.transpose();
        Eigen::VectorXd db1 = dpre.rowwise().sum();

        double* g = grad.data();
        Eigen::Map<Eigen::MatrixXd>(g, dW1.rows(), dW1.cols()) += dW1;
        g += cfg_.hidden * in_dim_;
        Eigen::Map<Eigen::VectorXd>(g, db1.size()) += db1;
        g += cfg_.hidden;
        Eigen::Map<Eigen::MatrixXd>(g, dW2.rows(), dW2.cols()) += dW2;
        g += n_bins_ * cfg_.hidden;
        Eigen::Map<Eigen::VectorXd>(g, db2.size()) += db2;

        return W1.transpose() * dpre;  // dL/dfeats
    }

    // scatter dL/dfeats back to dL/dlog|X| per cell (context windows overlap)
    std::vector<double> dfeats_to_dlogmag(const Eigen::MatrixXd& dfeats,
                                          std::size_t n_frames) const {
        std::vector<double> d(n_frames * n_bins_, 0.0);
        int ctx = static_cast<int>(cfg_.context);
        for (std::size_t t = 0; t < n_frames; ++t)
            for (int c = -ctx; c <= ctx; ++c) {
                int tc = std::clamp(static_cast<int>(t) + c, 0,
                                    static_cast<int>(n_frames) - 1);
                for (std::size_t f = 0; f < n_bins_; ++f)
                    d[tc * n_bins_ + f] += dfeats((c + ctx) * n_bins_ + f, t);
            }
        return d;
    }

    void save(const std::string& path) const {
        nlohmann::json j;
        j["format"] = "stemmark-separator";
        j["version"] = 1;
        j["fft_size"] = cfg_.stft.fft_size;
        j["hop"] = cfg_.stft.hop;
        j["context"] = cfg_.context;
        j["hidden"] = cfg_.hidden;
        j["weights"] = params_;
        std::ofstream f(path, std::ios::trunc);
        require(f.good(), ErrorKind::io, "MlpSeparator::save: cannot open " + path);
        f << j.dump();
    }

    static MlpSeparator load(const std::string& path) {
        std::ifstream f(path);
        require(f.good(), ErrorKind::io, "MlpSeparator::load: cannot open " + path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, std::string("MlpSeparator::load: ") + e.what());
        }
        require(j.value("format", "") == "stemmark-separator", ErrorKind::format,
                "MlpSeparator::load: not a separator checkpoint");
        require(j.value("version", 0) == 1, ErrorKind::format,
                "MlpSeparator::load: unsupported checkpoint version");
        SeparatorConfig cfg;
        cfg.stft.fft_size = j.at("fft_size").get<std::size_t>();
        cfg.stft.hop = j.at("hop").get<std::size_t>();
        cfg.context = j.at("context").get<std::size_t>();
        cfg.hidden = j.at("hidden").get<std::size_t>();
        MlpSeparator m(cfg);
        std::vector<double> w = j.at("weights").get<std::vector<double>>();
        require(w.size() == m.n_params(), ErrorKind::format,
                "MlpSeparator::load: weight count mismatch");
        m.params_ = std::move(w);
        return m;
    }

  private:
    using CMap = Eigen::Map<const Eigen::MatrixXd>;
    using CVMap = Eigen::Map<const Eigen::VectorXd>;

    CMap w1_map() const {
        return CMap(params_.data(), cfg_.hidden, in_dim_);
    }
    CVMap b1_map() const {
        return CVMap(params_.data() + cfg_.hidden * in_dim_, cfg_.hidden);
    }
    CMap w2_map() const {
        return CMap(params_.data() + cfg_.hidden * in_dim_ + cfg_.hidden, n_bins_,
                    cfg_.hidden);
    }
    CVMap b2_map() const {
        return CVMap(params_.data() + cfg_.hidden * in_dim_ + cfg_.hidden +
                         n_bins_ * cfg_.hidden,
                     n_bins_);
    }

    SeparatorConfig cfg_;
    std::size_t n_bins_;
    std::size_t in_dim_;
    std::vector<double> params_;
};

// Plain Adam over a flat parameter vector.
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    std::size_t t = 0;

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        require(params.size() == grad.size(), ErrorKind::argument,
                "Adam::step: size mismatch");
        for (double g : grad)
            require(std::isfinite(g), ErrorKind::numeric,
                    "Adam::step: non-finite gradient");
        if (m.empty()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++t;
        double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

}  // namespace stemmark
