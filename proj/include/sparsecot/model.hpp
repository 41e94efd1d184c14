#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sparsecot/blocks.hpp"
#include "sparsecot/cot.hpp"
#include "sparsecot/layers.hpp"
#include "sparsecot/masking.hpp"

namespace sparsecot {

struct ModelConfig {
    std::size_t V = 0;      // vocabulary size (required, >= 2)
    std::size_t D = 32;     // embedding dimension
    std::size_t H = 2;      // attention heads
    std::size_t D_ff = 0;   // feed-forward width; 0 means 4 * D
    std::size_t L_enc = 2;  // encoder layers
    std::size_t L_dec = 2;  // decoder layers
    std::size_t T = 3;      // reasoning steps
    double alpha = 1.0;     // sparsity factor for dimension masks
    std::string enc_pattern = "full";
    std::string dec_self_pattern = "causal";
    std::string cross_pattern = "full";
    std::uint64_t seed = 42;
    bool share_cot_weights = false;

    std::size_t d_ff() const { return D_ff == 0 ? 4 * D : D_ff; }
    std::size_t end_token() const { return V - 1; }

    void validate() const;
    /// Flat key=value text, keys matching the field names above.
    static ModelConfig parse(const std::string &text);
    static ModelConfig from_file(const std::string &path);
    std::string to_text() const;
};

struct DecoderLayerParams {
    MultiHeadParams self_attn;
    LayerNormParams norm1;
    MultiHeadParams cross_attn;
    LayerNormParams norm2;
    FeedForwardParams ffn;
    LayerNormParams norm3;
};

struct DecoderLayerGrads {
    MultiHeadGrads self_attn;
    LayerNormGrads norm1;
    MultiHeadGrads cross_attn;
    LayerNormGrads norm2;
    FeedForwardGrads ffn;
    LayerNormGrads norm3;
};

struct ModelParams {
    EmbeddingTable embedding;
    DimensionMask dim_mask; // embedding mask, also applied to decoder FFN output
    std::vector<TransformBlockParams> encoder;
    std::vector<TransformBlockParams> cot_steps; // one entry when weights are shared
    std::vector<DecoderLayerParams> decoder;
    Tensor w_out; // D x V
    Tensor b_out; // V
};

struct ModelGrads {
    Tensor d_embedding;
    std::vector<TransformBlockGrads> encoder;
    std::vector<TransformBlockGrads> cot_steps;
    std::vector<DecoderLayerGrads> decoder;
    Tensor dw_out, db_out;
};

/// Seeded parameter construction; the dimension mask is chosen by mean |E|
/// magnitude per dimension at build time.
ModelParams init_params(const ModelConfig &config);
ModelGrads zero_grads_like(const ModelParams &params);

/// Stable name -> tensor enumeration; parameter and gradient orders match.
std::vector<std::pair<std::string, Tensor *>> named_tensors(ModelParams &params);
std::vector<std::pair<std::string, Tensor *>> named_tensors(ModelGrads &grads);

struct EncodeResult {
    Tensor h_e; // B x N x D
    CotTrace trace;
    double min_margin = 0.0;
};

/// Encoder stack followed by the reasoning module.
EncodeResult encode(const TokenBatch &tokens, const ModelParams &params,
                    const ModelConfig &config);

/// One teacher-forced decoder pass; returns the next-token distribution
/// (B x V simplex rows) for the final prefix position.
Tensor decode_step(const TokenBatch &prefix, const Tensor &h_e, const ModelParams &params,
                   const ModelConfig &config);

/// Greedy generation from an encoder input; starts the decoder at the end
/// token and stops at max_len or when the end token is produced.
std::vector<int> greedy_decode(const TokenRow &src_tokens, std::size_t max_len,
                               const ModelParams &params, const ModelConfig &config);

struct ForwardStats {
    double loss = 0.0;
    double min_attn_margin = 0.0;
    double min_cot_gap = 0.0;
    CotTrace trace;
};

/// Teacher-forced loss over all target positions plus parameter gradients.
ForwardStats forward_backward(const TokenBatch &src, const TokenBatch &dec_in,
                              const TokenBatch &targets, const ModelParams &params,
                              const ModelConfig &config, ModelGrads *grads);

enum class ToyTask { Copy, Reverse };

ToyTask parse_toy_task(const std::string &name);

struct TrainResult {
    std::vector<double> losses;
    ModelParams params;
    std::size_t start_step = 0;
};

/// Plain gradient descent on the teacher-forced sparsemax loss; batches are a
/// pure function of (seed, step), so runs resume deterministically.
TrainResult train_toy(ToyTask task, const ModelConfig &config, std::size_t steps, double lr,
                      std::size_t batch_size = 16, const ModelParams *resume_from = nullptr,
                      std::size_t start_step = 0);

/// Fraction of target tokens greedy decoding reproduces over freshly sampled
/// sequences.
double decode_token_accuracy(const ModelParams &params, const ModelConfig &config, ToyTask task,
                             std::size_t n_sequences, std::uint64_t seed,
                             std::size_t seq_len = 8);

/// Deterministic per-step batch: sources in [0, V-2], decoder input shifted
/// right behind the end token.
void make_toy_batch(ToyTask task, const ModelConfig &config, std::uint64_t seed,
                    std::size_t step, std::size_t batch_size, TokenBatch &src,
                    TokenBatch &dec_in, TokenBatch &targets, std::size_t seq_len = 8);

struct GradCheckReport {
    std::string path;
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    std::size_t resamples = 0;
};

/// Central finite differences against the closed-form gradients.
GradCheckReport grad_check_ffn(std::uint64_t seed, std::size_t probes = 64);
GradCheckReport grad_check_attention(std::uint64_t seed, std::size_t probes = 64);
GradCheckReport grad_check_model(const ModelConfig &config, std::size_t probes = 64,
                                 std::size_t seq_len = 4);

} // namespace sparsecot
