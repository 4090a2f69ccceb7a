#include "invalign/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace invalign {

void GradBuffer::zero() {
    for (auto& w : weights) std::fill(w.data().begin(), w.data().end(), 0.0);
    for (auto& b : biases) std::fill(b.data().begin(), b.data().end(), 0.0);
}

bool GradBuffer::all_finite() const noexcept {
    for (const auto& w : weights)
        if (!w.all_finite()) return false;
    for (const auto& b : biases)
        if (!b.all_finite()) return false;
    return true;
}

MlpEncoder::MlpEncoder(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("encoder needs at least input and output dims");
    for (auto d : dims_) {
        if (d == 0) throw std::invalid_argument("encoder layer widths must be positive");
    }
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
        weights_.emplace_back(dims_[k], dims_[k + 1]);
        biases_.emplace_back(1, dims_[k + 1]);
    }
}

std::size_t MlpEncoder::parameter_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) n += (dims_[k] + 1) * dims_[k + 1];
    return n;
}

GradBuffer MlpEncoder::zero_grads() const {
    GradBuffer g;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        g.weights.emplace_back(weights_[k].rows(), weights_[k].cols());
        g.biases.emplace_back(1, biases_[k].cols());
    }
    return g;
}

ForwardResult forward(const MlpEncoder& enc, const Matrix& x_batch) {
    if (x_batch.cols() != enc.input_dim()) {
        throw std::invalid_argument("encoder forward: input has " + std::to_string(x_batch.cols()) +
                                    " columns, encoder expects " + std::to_string(enc.input_dim()));
    }
    ForwardResult res;
    auto& cache = res.cache;
    Matrix h = x_batch;
    const std::size_t layers = enc.num_layers();
    for (std::size_t k = 0; k < layers; ++k) {
        Matrix pre = matmul(h, enc.weights()[k]);
        const auto bias = enc.biases()[k].row(0);
        for (std::size_t i = 0; i < pre.rows(); ++i) {
            auto r = pre.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
        }
        cache.inputs.push_back(std::move(h));
        h = pre;
        if (k + 1 < layers) {
            for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
        }
        cache.preacts.push_back(std::move(pre));
    }
    cache.normalized = l2_normalize_rows(h);
    res.z = cache.normalized.out;
    return res;
}

Matrix embed(const MlpEncoder& enc, const Matrix& x_batch) {
    return forward(enc, x_batch).z;
}

namespace {

void check_cache(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz) {
    if (cache.preacts.size() != enc.num_layers() || cache.inputs.size() != enc.num_layers()) {
        throw std::invalid_argument("encoder backward: cache was produced by a different encoder");
    }
    for (std::size_t k = 0; k < enc.num_layers(); ++k) {
        if (cache.preacts[k].cols() != enc.weights()[k].cols() ||
            cache.inputs[k].cols() != enc.weights()[k].rows()) {
            throw std::invalid_argument("encoder backward: stale cache at layer " +
                                        std::to_string(k));
        }
    }
    if (dL_dz.rows() != cache.normalized.out.rows() ||
        dL_dz.cols() != cache.normalized.out.cols()) {
        throw std::invalid_argument("encoder backward: upstream gradient " + dL_dz.shape() +
                                    " does not match embeddings " +
                                    cache.normalized.out.shape());
    }
}

/// Walks the layers backwards; fills `grads` when non-null. Returns dL/dx
/// when `need_input`, otherwise the gradient at the first layer's output.
Matrix backprop(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz,
                GradBuffer* grads, bool need_input) {
    check_cache(enc, cache, dL_dz);
    Matrix delta = cache.normalized.backward(dL_dz);
    for (std::size_t k = enc.num_layers(); k-- > 0;) {
        if (k + 1 < enc.num_layers()) {
            // ReLU on hidden layers
            const auto& pre = cache.preacts[k];
            auto dv = delta.data();
            auto pv = pre.data();
            for (std::size_t i = 0; i < dv.size(); ++i) {
                if (!(pv[i] > 0.0)) dv[i] = 0.0;
            }
        }
        if (grads) {
            grads->weights[k] = matmul_tn(cache.inputs[k], delta);
            Matrix db(1, delta.cols());
            for (std::size_t i = 0; i < delta.rows(); ++i) {
                auto r = delta.row(i);
                for (std::size_t j = 0; j < r.size(); ++j) db(0, j) += r[j];
            }
            grads->biases[k] = std::move(db);
        }
        if (k > 0 || need_input) delta = matmul_nt(delta, enc.weights()[k]);
    }
    return delta;
}

}  // namespace

GradBuffer backward(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz) {
    GradBuffer grads = enc.zero_grads();
    backprop(enc, cache, dL_dz, &grads, false);
    return grads;
}

Matrix input_gradient(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz) {
    return backprop(enc, cache, dL_dz, nullptr, true);
}

void sgd_step(MlpEncoder& enc, const GradBuffer& grads, double lr, double weight_decay) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    if (grads.weights.size() != enc.num_layers() || grads.biases.size() != enc.num_layers()) {
        throw std::invalid_argument("sgd_step: gradient buffer does not match encoder");
    }
    for (std::size_t k = 0; k < enc.num_layers(); ++k) {
        if (grads.weights[k].rows() != enc.weights()[k].rows() ||
            grads.weights[k].cols() != enc.weights()[k].cols() ||
            grads.biases[k].cols() != enc.biases()[k].cols()) {
            throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                        std::to_string(k));
        }
    }
    if (!grads.all_finite()) throw NumericalError("sgd_step: non-finite encoder gradient");

    for (std::size_t k = 0; k < enc.num_layers(); ++k) {
        auto w = enc.weights()[k].data();
        auto gw = grads.weights[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
        auto b = enc.biases()[k].data();
        auto gb = grads.biases[k].data();
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
    }
}

void init(MlpEncoder& enc, const Rng& rng, InitScheme scheme) {
    switch (scheme) {
        case InitScheme::KaimingNormal:
            for (std::size_t k = 0; k < enc.num_layers(); ++k) {
                Rng layer_rng = rng.derive(Stream::Init, k);
                auto& w = enc.weights()[k];
                const double stddev = std::sqrt(2.0 / static_cast<double>(w.rows()));
                for (double& v : w.data()) v = stddev * layer_rng.normal();
                std::fill(enc.biases()[k].data().begin(), enc.biases()[k].data().end(), 0.0);
            }
            break;
    }
}

}  // namespace invalign
