#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssk/graph.hpp"

// Sketch-to-text captioning head: K learned query vectors cross-attend over
// the GCN node embeddings, and a single-layer causal decoder generates a
// short caption conditioned on the query outputs (prepended as a prefix).
// Training runs in two stages: stage 1 trains the encoder and query module
// with the decoder frozen; stage 2 fine-tunes everything.
namespace ssk {

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;

    // Lowercased alphanumeric word split; shared by build/encode.
    static std::vector<std::string> tokenize(const std::string& text);
    static Vocabulary build(const std::vector<std::string>& texts, int max_words = 256);

    int size() const { return static_cast<int>(words_.size()); }
    bool contains(const std::string& word) const { return index_.count(word) > 0; }
    int id(const std::string& word) const;         // UnknownToken
    const std::string& word(int token_id) const;   // UnknownToken

    std::vector<int> encode(const std::string& text) const;  // BOS words… EOS
    std::string decode(const std::vector<int>& ids) const;   // specials dropped

    std::string serialize() const;  // newline-joined words, specials included
    static Vocabulary deserialize(const std::string& blob);

  private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct Caption {
    std::vector<int> ids;  // BOS … EOS, PAD allowed only after EOS
    std::string text;
};

struct CaptionerParams {
    int dim = 0;
    int n_queries = 0;
    int vocab_size = 0;
    int max_len = 0;  // maximum token-id sequence length including BOS/EOS
    int ff_dim = 0;

    nn::NodePtr queries;                       // K×d learned queries
    nn::NodePtr attn_q, attn_k, attn_v;        // d×d cross-attention projections
    nn::NodePtr tok_embed;                     // V×d
    nn::NodePtr pos_embed;                     // (K+max_len)×d
    nn::NodePtr dec_q, dec_k, dec_v, dec_o;    // d×d causal self-attention
    nn::NodePtr ff_w1, ff_b1, ff_w2, ff_b2;    // d×f, f, f×d, d
    nn::NodePtr out_w, out_b;                  // d×V, V

    static CaptionerParams init(int dim, int n_queries, int vocab_size, int max_len,
                                std::mt19937_64& rng, int ff_dim = 0);
    std::vector<nn::NodePtr> query_module_parameters() const;  // trainable in stage 1
    std::vector<nn::NodePtr> decoder_parameters() const;       // frozen in stage 1
    std::vector<nn::NodePtr> parameters() const;
    std::vector<std::pair<std::string, nn::NodePtr>> named_tensors() const;
};

inline constexpr int kDefaultQueryCount = 8;
inline constexpr int kDefaultCaptionerDim = 128;
inline constexpr int kDefaultMaxCaptionLen = 16;

// Softmax attention weights of the K queries over node embeddings (K×n).
nn::NodePtr cross_attention_weights(const SketchEmbedding& emb, const CaptionerParams& params);

// Query outputs: attention-weighted value projections of node embeddings (K×d).
nn::NodePtr encode_queries(const SketchEmbedding& emb, const CaptionerParams& params);

// Greedy argmax decoding, stops at EOS or max_len ids total.
Caption decode_caption(const nn::NodePtr& queries, const CaptionerParams& params,
                       const Vocabulary& vocab, int max_len);

struct CaptionSample {
    SketchGraph graph;
    Caption caption;
};

// Teacher-forced cross-entropy, averaged over non-PAD target positions
// across the whole batch.
nn::NodePtr caption_loss_node(const std::vector<const CaptionSample*>& batch,
                              const GcnParams& gcn, const CaptionerParams& params);
double caption_loss(const std::vector<CaptionSample>& batch, const GcnParams& gcn,
                    const CaptionerParams& params);

struct CaptionTrainConfig {
    int epochs = 300;
    double lr = 1e-3;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

// Mutates gcn/params in place; returns per-epoch mean training loss.
// stage must be 1 or 2.
std::vector<double> train_captioner(const std::vector<CaptionSample>& dataset, GcnParams& gcn,
                                    CaptionerParams& params, const CaptionTrainConfig& config,
                                    int stage);

// Position-wise greedy-decode accuracy against reference ids (BOS excluded,
// EOS included); used by overfit checks.
double greedy_token_accuracy(const std::vector<CaptionSample>& dataset, const GcnParams& gcn,
                             const CaptionerParams& params, const Vocabulary& vocab, int max_len);

}  // namespace ssk
