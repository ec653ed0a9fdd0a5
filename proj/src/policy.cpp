#include "ccoma/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace ccoma {

namespace {

Value ones(std::vector<int> dims) {
    Value v = zeros(std::move(dims));
    std::fill(v->data.begin(), v->data.end(), 1.0);
    return v;
}

}  // namespace

CommPolicy::CommPolicy(PolicyConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.n_slots <= 0 || cfg_.obs_dim <= 0 || cfg_.n_actions <= 0)
        throw std::invalid_argument("CommPolicy: n_slots, obs_dim and n_actions must be positive");
    Rng rng(init_seed);

    enc_w_ = params_.add("policy/encoder/w", zeros({cfg_.obs_dim, cfg_.d_model}));
    enc_b_ = params_.add("policy/encoder/b", zeros({cfg_.d_model}));
    init_linear(*enc_w_, rng, cfg_.obs_dim);

    for (int l = 0; l < cfg_.n_layers; ++l) {
        ConvLayerParams lp;
        const std::string base = "policy/conv" + std::to_string(l) + "/";
        for (int h = 0; h < cfg_.n_heads; ++h) {
            AttentionHead head;
            const std::string hb = base + "head" + std::to_string(h) + "/";
            head.wq = params_.add(hb + "wq", zeros({cfg_.d_model, cfg_.d_k}));
            head.wk = params_.add(hb + "wk", zeros({cfg_.d_model, cfg_.d_k}));
            head.wv = params_.add(hb + "wv", zeros({cfg_.d_model, cfg_.d_k}));
            init_linear(*head.wq, rng, cfg_.d_model);
            init_linear(*head.wk, rng, cfg_.d_model);
            init_linear(*head.wv, rng, cfg_.d_model);
            lp.heads.push_back(std::move(head));
        }
        lp.mix_w = params_.add(base + "mix/w", zeros({cfg_.n_heads * cfg_.d_k, cfg_.d_model}));
        lp.mix_b = params_.add(base + "mix/b", zeros({cfg_.d_model}));
        init_linear(*lp.mix_w, rng, cfg_.n_heads * cfg_.d_k);
        layers_.push_back(std::move(lp));
    }

    const int dm = cfg_.d_model, hh = cfg_.rnn_hidden;
    gru_wxz_ = params_.add("policy/gru/wxz", zeros({dm, hh}));
    gru_whz_ = params_.add("policy/gru/whz", zeros({hh, hh}));
    gru_bz_ = params_.add("policy/gru/bz", zeros({hh}));
    gru_wxr_ = params_.add("policy/gru/wxr", zeros({dm, hh}));
    gru_whr_ = params_.add("policy/gru/whr", zeros({hh, hh}));
    gru_br_ = params_.add("policy/gru/br", zeros({hh}));
    gru_wxn_ = params_.add("policy/gru/wxn", zeros({dm, hh}));
    gru_whn_ = params_.add("policy/gru/whn", zeros({hh, hh}));
    gru_bn_ = params_.add("policy/gru/bn", zeros({hh}));
    for (Value* w : {&gru_wxz_, &gru_wxr_, &gru_wxn_}) init_linear(**w, rng, dm);
    for (Value* w : {&gru_whz_, &gru_whr_, &gru_whn_}) init_linear(**w, rng, hh);

    head_w_ = params_.add("policy/head/w", zeros({hh, cfg_.n_actions}));
    head_b_ = params_.add("policy/head/b", zeros({cfg_.n_actions}));
    init_linear(*head_w_, rng, hh);
}

void CommPolicy::copy_params_from(const CommPolicy& other) {
    if (other.params_.items.size() != params_.items.size())
        throw std::invalid_argument("copy_params_from: parameter collections differ");
    for (std::size_t i = 0; i < params_.items.size(); ++i)
        params_.items[i].second->data = other.params_.items[i].second->data;
}

Value CommPolicy::encode_observations(Tape& t, const Value& obs) const {
    if (obs->dims.size() != 2 || obs->dims[1] != cfg_.obs_dim)
        throw std::invalid_argument("encode_observations: expected [n x " +
                                    std::to_string(cfg_.obs_dim) + "], got " + shape_str(obs->dims));
    return t.relu(t.add(t.matmul(obs, enc_w_), enc_b_));
}

Value CommPolicy::attention_weights(Tape& t, const Value& h, const Value& mask,
                                    const Value& wq, const Value& wk, double mask_fill) {
    const int d_k = wq->dims[1];
    Value q = t.matmul(h, wq);
    Value k = t.matmul(h, wk);
    Value logits = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_k)));
    return t.masked_row_softmax(logits, mask, mask_fill);
}

Value CommPolicy::conv_layer(Tape& t, const Value& h, const Value& mask,
                             const ConvLayerParams& lp) const {
    std::vector<Value> head_outs;
    head_outs.reserve(lp.heads.size());
    for (const auto& head : lp.heads) {
        Value alpha = attention_weights(t, h, mask, head.wq, head.wk, cfg_.mask_fill);
        head_outs.push_back(t.matmul(alpha, t.matmul(h, head.wv)));
    }
    Value cat = head_outs.size() == 1 ? head_outs[0] : t.concat(head_outs, 1);
    return t.relu(t.add(t.matmul(cat, lp.mix_w), lp.mix_b));
}

CommPolicy::Features CommPolicy::forward_features(Tape& t, const Value& obs, const Value& mask,
                                                  const Value& rnn_prev) const {
    Value h = encode_observations(t, obs);
    for (const auto& lp : layers_) h = conv_layer(t, h, mask, lp);

    // gated recurrent unit over the convolution output
    const Value& x = h;
    Value z = t.sigmoid(t.add(t.add(t.matmul(x, gru_wxz_), t.matmul(rnn_prev, gru_whz_)), gru_bz_));
    Value r = t.sigmoid(t.add(t.add(t.matmul(x, gru_wxr_), t.matmul(rnn_prev, gru_whr_)), gru_br_));
    Value n = t.tanh(t.add(t.add(t.matmul(x, gru_wxn_), t.matmul(t.mul(r, rnn_prev), gru_whn_)), gru_bn_));
    Value one = ones({cfg_.n_slots, cfg_.rnn_hidden});
    Value hidden = t.add(t.mul(t.sub(one, z), rnn_prev), t.mul(z, n));

    return Features{h, hidden};
}

Value CommPolicy::head_outputs(Tape& t, const Value& hidden) const {
    return t.add(t.matmul(hidden, head_w_), head_b_);
}

CommPolicy::Forward CommPolicy::forward(Tape& t, const Value& obs, const Value& mask,
                                        const Value& avail, const Value& rnn_prev) const {
    Features f = forward_features(t, obs, mask, rnn_prev);
    Value logits = head_outputs(t, f.hidden);
    Value dist = t.masked_row_softmax(logits, avail, cfg_.mask_fill);
    return Forward{dist, f.hidden, f.messages};
}

Value CommPolicy::mask_value(const AdjacencyMask& adj) const {
    if (adj.n != cfg_.n_slots)
        throw std::invalid_argument("mask_value: mask is for " + std::to_string(adj.n) +
                                    " agents, policy has " + std::to_string(cfg_.n_slots));
    return make_tensor({adj.n, adj.n}, adj.m);
}

int sample_action(std::span<const double> dist, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    double acc = 0.0;
    int last_nonzero = -1;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > 0.0) last_nonzero = static_cast<int>(i);
        acc += dist[i];
        if (x < acc && dist[i] > 0.0) return static_cast<int>(i);
    }
    if (last_nonzero < 0) throw std::invalid_argument("sample_action: distribution is all zero");
    return last_nonzero;  // guards against fp round-off in the cumulative sum
}

int greedy_action(std::span<const double> dist) {
    int best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
        if (dist[i] > dist[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace ccoma
