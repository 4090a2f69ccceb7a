#pragma once

// The feature map: an MLP with ReLU hidden layers whose output rows are
// L2-normalized onto the unit sphere. Forward/backward are written by hand;
// every backward is checked against finite differences in the tests.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "invalign/numkit.hpp"

namespace invalign {

/// One Matrix per parameter tensor, shaped like the encoder it came from.
struct GradBuffer {
    std::vector<Matrix> weights;  // in × out
    std::vector<Matrix> biases;   // 1 × out

    void zero();
    bool all_finite() const noexcept;
};

/// Everything backward needs from a forward pass.
struct ForwardCache {
    std::vector<Matrix> inputs;       // input to each layer (post-activation of previous)
    std::vector<Matrix> preacts;      // x·W + b of each layer
    NormalizedRows normalized;        // output head
};

class MlpEncoder {
public:
    MlpEncoder() = default;
    /// dims = (d, h_1, ..., h_L, m); at least input and output.
    explicit MlpEncoder(std::vector<std::size_t> dims);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t embed_dim() const noexcept { return dims_.back(); }
    std::size_t num_layers() const noexcept { return weights_.size(); }
    std::size_t parameter_count() const noexcept;

    std::vector<Matrix>& weights() noexcept { return weights_; }
    const std::vector<Matrix>& weights() const noexcept { return weights_; }
    std::vector<Matrix>& biases() noexcept { return biases_; }
    const std::vector<Matrix>& biases() const noexcept { return biases_; }

    GradBuffer zero_grads() const;

    friend bool operator==(const MlpEncoder&, const MlpEncoder&) = default;

private:
    std::vector<std::size_t> dims_;
    std::vector<Matrix> weights_;
    std::vector<Matrix> biases_;
};

struct ForwardResult {
    Matrix z;  // unit-norm rows
    ForwardCache cache;
};

/// Throws std::invalid_argument on a column mismatch and NumericalError when
/// an output row collapses below the normalization guard (e.g. all-zero
/// parameters), which is why initialization must never be all-zero.
ForwardResult forward(const MlpEncoder& enc, const Matrix& x_batch);

/// Embeddings only; same checks as forward().
Matrix embed(const MlpEncoder& enc, const Matrix& x_batch);

GradBuffer backward(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz);

/// Gradient of the loss with respect to the encoder input rows.
Matrix input_gradient(const MlpEncoder& enc, const ForwardCache& cache, const Matrix& dL_dz);

/// θ ← θ − γ(g + weight_decay·θ) for weights, θ ← θ − γg for biases.
/// Throws NumericalError on a non-finite gradient before touching θ.
void sgd_step(MlpEncoder& enc, const GradBuffer& grads, double lr, double weight_decay);

enum class InitScheme { KaimingNormal };

/// Kaiming fan-in Gaussian weights (std √(2/fan_in)), zero biases. Layer k
/// draws from rng.derive(Stream::Init, k).
void init(MlpEncoder& enc, const Rng& rng, InitScheme scheme = InitScheme::KaimingNormal);

}  // namespace invalign
