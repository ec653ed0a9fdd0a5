#pragma once

#include <cstdint>
#include <vector>

#include "ccoma/adjacency.hpp"
#include "ccoma/optim.hpp"
#include "ccoma/rng.hpp"
#include "ccoma/tensor.hpp"

// The decentralized actor: observation encoder, stacked masked multi-head
// attention graph convolutions, and a recurrent head that outputs one
// multinomial policy per agent. Parameters are shared across agents, so the
// network is permutation equivariant; agent identity enters only through the
// observation features.

namespace ccoma {

struct PolicyConfig {
    int n_slots = 0;    // fixed agent slot count (inactive slots carry zeros)
    int obs_dim = 0;
    int n_actions = 0;
    int d_model = 64;   // encoder output / convolution feature width
    int n_layers = 2;
    int n_heads = 8;
    int d_k = 16;       // per-head projection width
    int rnn_hidden = 64;
    double mask_fill = -1e9;
};

struct AttentionHead {
    Value wq, wk, wv;  // each [d_model x d_k]
};

struct ConvLayerParams {
    std::vector<AttentionHead> heads;
    Value mix_w;  // [n_heads*d_k x d_model]
    Value mix_b;  // [d_model]
};

class CommPolicy {
  public:
    CommPolicy(PolicyConfig cfg, std::uint64_t init_seed);

    const PolicyConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // copies parameter values from another policy of identical configuration
    void copy_params_from(const CommPolicy& other);

    Value encode_observations(Tape& t, const Value& obs) const;

    // one attention head; rows sum to 1, masked-out entries are exactly 0
    static Value attention_weights(Tape& t, const Value& h, const Value& mask,
                                   const Value& wq, const Value& wk, double mask_fill = -1e9);

    Value conv_layer(Tape& t, const Value& h, const Value& mask, const ConvLayerParams& lp) const;

    struct Features {
        Value messages;  // final convolution output, [n x d_model]
        Value hidden;    // new recurrent state, [n x rnn_hidden]
    };
    // trunk shared by the policy head and the Q head of the value-based ablation
    Features forward_features(Tape& t, const Value& obs, const Value& mask,
                              const Value& rnn_prev) const;

    // raw per-agent head outputs (policy logits / action values), [n x n_actions]
    Value head_outputs(Tape& t, const Value& hidden) const;

    struct Forward {
        Value dist;      // [n x n_actions]; unavailable actions have probability 0
        Value hidden;    // next recurrent state
        Value messages;  // final convolution output (what neighbours aggregate)
    };
    Forward forward(Tape& t, const Value& obs, const Value& mask, const Value& avail,
                    const Value& rnn_prev) const;

    Value initial_state() const { return zeros({cfg_.n_slots, cfg_.rnn_hidden}); }

    Value mask_value(const AdjacencyMask& adj) const;

  private:
    PolicyConfig cfg_;
    ParamStore params_;
    Value enc_w_, enc_b_;
    std::vector<ConvLayerParams> layers_;
    Value gru_wxz_, gru_whz_, gru_bz_;
    Value gru_wxr_, gru_whr_, gru_br_;
    Value gru_wxn_, gru_whn_, gru_bn_;
    Value head_w_, head_b_;
};

// Samples an index from a probability row; only indices with nonzero
// probability can come out.
int sample_action(std::span<const double> dist, Rng& rng);

// argmax with lowest-index tie-break
int greedy_action(std::span<const double> dist);

}  // namespace ccoma
