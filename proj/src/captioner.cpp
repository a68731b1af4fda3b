#include "ssk/captioner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace ssk {

// ---------------------------------------------------------------------------
// Vocabulary

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int max_words) {
    Vocabulary v;
    v.words_ = {"<pad>", "<bos>", "<eos>"};
    for (int i = 0; i < 3; ++i) v.index_[v.words_[static_cast<std::size_t>(i)]] = i;
    for (const auto& text : texts) {
        for (const auto& w : tokenize(text)) {
            if (v.index_.count(w)) continue;
            if (static_cast<int>(v.words_.size()) - 3 >= max_words) {
                throw InvalidArgument("vocabulary exceeds " + std::to_string(max_words) + " words");
            }
            v.index_[w] = static_cast<int>(v.words_.size());
            v.words_.push_back(w);
        }
    }
    return v;
}

int Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw UnknownToken("word not in vocabulary: " + word);
    return it->second;
}

const std::string& Vocabulary::word(int token_id) const {
    if (token_id < 0 || token_id >= size()) {
        throw UnknownToken("token id out of range: " + std::to_string(token_id));
    }
    return words_[static_cast<std::size_t>(token_id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids{kBos};
    for (const auto& w : tokenize(text)) ids.push_back(id(w));
    ids.push_back(kEos);
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int token_id : ids) {
        if (token_id == kPad || token_id == kBos || token_id == kEos) continue;
        if (!out.empty()) out.push_back(' ');
        out += word(token_id);
    }
    return out;
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (i) out.push_back('\n');
        out += words_[i];
    }
    return out;
}

Vocabulary Vocabulary::deserialize(const std::string& blob) {
    Vocabulary v;
    std::istringstream in(blob);
    std::string line;
    while (std::getline(in, line)) {
        v.index_[line] = static_cast<int>(v.words_.size());
        v.words_.push_back(line);
    }
    if (v.size() < 3 || v.words_[0] != "<pad>" || v.words_[1] != "<bos>" || v.words_[2] != "<eos>") {
        throw InvalidArgument("vocabulary blob missing reserved tokens");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Parameters

CaptionerParams CaptionerParams::init(int dim, int n_queries, int vocab_size, int max_len,
                                      std::mt19937_64& rng, int ff_dim) {
    if (ff_dim <= 0) ff_dim = 2 * dim;
    CaptionerParams p;
    p.dim = dim;
    p.n_queries = n_queries;
    p.vocab_size = vocab_size;
    p.max_len = max_len;
    p.ff_dim = ff_dim;
    const double w = std::sqrt(1.0 / dim);
    p.queries = nn::parameter(nn::Tensor::randn({n_queries, dim}, rng, w));
    p.attn_q = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.attn_k = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.attn_v = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.tok_embed = nn::parameter(nn::Tensor::randn({vocab_size, dim}, rng, 0.1));
    p.pos_embed = nn::parameter(nn::Tensor::randn({n_queries + max_len, dim}, rng, 0.1));
    p.dec_q = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.dec_k = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.dec_v = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.dec_o = nn::parameter(nn::Tensor::randn({dim, dim}, rng, w));
    p.ff_w1 = nn::parameter(nn::Tensor::randn({dim, ff_dim}, rng, w));
    p.ff_b1 = nn::parameter(nn::Tensor({ff_dim}, 0.0));
    p.ff_w2 = nn::parameter(nn::Tensor::randn({ff_dim, dim}, rng, std::sqrt(1.0 / ff_dim)));
    p.ff_b2 = nn::parameter(nn::Tensor({dim}, 0.0));
    p.out_w = nn::parameter(nn::Tensor::randn({dim, vocab_size}, rng, w));
    p.out_b = nn::parameter(nn::Tensor({vocab_size}, 0.0));
    return p;
}

std::vector<nn::NodePtr> CaptionerParams::query_module_parameters() const {
    return {queries, attn_q, attn_k, attn_v};
}

std::vector<nn::NodePtr> CaptionerParams::decoder_parameters() const {
    return {tok_embed, pos_embed, dec_q, dec_k, dec_v, dec_o,
            ff_w1, ff_b1, ff_w2, ff_b2, out_w, out_b};
}

std::vector<nn::NodePtr> CaptionerParams::parameters() const {
    auto out = query_module_parameters();
    const auto dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

std::vector<std::pair<std::string, nn::NodePtr>> CaptionerParams::named_tensors() const {
    return {{"queries", queries}, {"attn_q", attn_q}, {"attn_k", attn_k}, {"attn_v", attn_v},
            {"tok_embed", tok_embed}, {"pos_embed", pos_embed},
            {"dec_q", dec_q}, {"dec_k", dec_k}, {"dec_v", dec_v}, {"dec_o", dec_o},
            {"ff_w1", ff_w1}, {"ff_b1", ff_b1}, {"ff_w2", ff_w2}, {"ff_b2", ff_b2},
            {"out_w", out_w}, {"out_b", out_b}};
}

// ---------------------------------------------------------------------------
// Forward paths

nn::NodePtr cross_attention_weights(const SketchEmbedding& emb, const CaptionerParams& params) {
    if (emb.node_embeddings->value.dim(1) != params.dim) {
        throw DimensionMismatch("cross attention: embedding dim mismatch");
    }
    auto q = nn::matmul(params.queries, params.attn_q);
    auto k = nn::matmul(emb.node_embeddings, params.attn_k);
    auto scores = nn::scale(nn::matmul(q, k, false, true), 1.0 / std::sqrt(params.dim));
    return nn::softmax_rows(scores);
}

nn::NodePtr encode_queries(const SketchEmbedding& emb, const CaptionerParams& params) {
    auto attn = cross_attention_weights(emb, params);
    auto v = nn::matmul(emb.node_embeddings, params.attn_v);
    return nn::matmul(attn, v);
}

namespace {

// Decoder forward over [queries | token embeddings]; returns logits for the
// token rows only (T×V), where row t predicts token t+1.
nn::NodePtr decoder_logits(const nn::NodePtr& queries, const std::vector<int>& input_ids,
                           const CaptionerParams& p) {
    const int k = p.n_queries;
    const int t = static_cast<int>(input_ids.size());
    if (k + t > p.pos_embed->value.dim(0)) {
        throw DimensionMismatch("decoder sequence exceeds positional table");
    }
    auto tok = nn::embed_rows(p.tok_embed, input_ids);
    auto seq = nn::add(nn::concat_rows(queries, tok), nn::slice_rows(p.pos_embed, 0, k + t));
    auto q = nn::matmul(seq, p.dec_q);
    auto kk = nn::matmul(seq, p.dec_k);
    auto v = nn::matmul(seq, p.dec_v);
    auto attn = nn::causal_softmax_rows(
        nn::scale(nn::matmul(q, kk, false, true), 1.0 / std::sqrt(p.dim)));
    auto h = nn::add(seq, nn::matmul(nn::matmul(attn, v), p.dec_o));
    auto ff = nn::add_bias_rows(
        nn::matmul(nn::relu(nn::add_bias_rows(nn::matmul(h, p.ff_w1), p.ff_b1)), p.ff_w2),
        p.ff_b2);
    h = nn::add(h, ff);
    auto logits = nn::add_bias_rows(nn::matmul(h, p.out_w), p.out_b);
    return nn::slice_rows(logits, k, t);
}

}  // namespace

Caption decode_caption(const nn::NodePtr& queries, const CaptionerParams& params,
                       const Vocabulary& vocab, int max_len) {
    if (max_len < 2) throw InvalidArgument("decode_caption: max_len must be >= 2");
    max_len = std::min(max_len, params.max_len);
    Caption cap;
    cap.ids = {Vocabulary::kBos};
    while (static_cast<int>(cap.ids.size()) < max_len - 1) {
        auto logits = decoder_logits(queries, cap.ids, params);
        const int last = logits->value.dim(0) - 1;
        int best = 0;
        double best_v = logits->value.at(last, 0);
        for (int j = 1; j < logits->value.dim(1); ++j) {
            if (logits->value.at(last, j) > best_v) {
                best_v = logits->value.at(last, j);
                best = j;
            }
        }
        if (best == Vocabulary::kEos) break;
        cap.ids.push_back(best);
    }
    cap.ids.push_back(Vocabulary::kEos);
    cap.text = vocab.decode(cap.ids);
    return cap;
}

nn::NodePtr caption_loss_node(const std::vector<const CaptionSample*>& batch,
                              const GcnParams& gcn, const CaptionerParams& params) {
    if (batch.empty()) throw EmptyDataset("caption loss: empty batch");
    // Total non-PAD target positions, for an exact position-level mean.
    int total = 0;
    for (const auto* s : batch) {
        for (std::size_t t = 1; t < s->caption.ids.size(); ++t) {
            if (s->caption.ids[t] != Vocabulary::kPad) ++total;
        }
    }
    if (total == 0) throw EmptyDataset("caption loss: no unmasked target positions");

    nn::NodePtr loss;
    for (const auto* s : batch) {
        const auto& ids = s->caption.ids;
        if (ids.size() < 2 || ids.front() != Vocabulary::kBos) {
            throw InvalidArgument("caption must start with BOS and hold at least BOS+EOS");
        }
        std::vector<int> inputs(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        std::vector<bool> mask(targets.size());
        int n_active = 0;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            mask[t] = targets[t] != Vocabulary::kPad;
            if (mask[t]) ++n_active;
        }
        if (n_active == 0) continue;
        auto queries = encode_queries(gcn_forward(s->graph, gcn), params);
        auto logits = decoder_logits(queries, inputs, params);
        auto ce = nn::cross_entropy_rows(logits, targets, mask);
        auto weighted = nn::scale(ce, static_cast<double>(n_active) / total);
        loss = loss ? nn::add(loss, weighted) : weighted;
    }
    return loss;
}

double caption_loss(const std::vector<CaptionSample>& batch, const GcnParams& gcn,
                    const CaptionerParams& params) {
    std::vector<const CaptionSample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& s : batch) ptrs.push_back(&s);
    return caption_loss_node(ptrs, gcn, params)->scalar();
}

std::vector<double> train_captioner(const std::vector<CaptionSample>& dataset, GcnParams& gcn,
                                    CaptionerParams& params, const CaptionTrainConfig& config,
                                    int stage) {
    if (dataset.empty()) throw EmptyDataset("train_captioner: empty dataset");
    if (stage != 1 && stage != 2) throw InvalidArgument("train_captioner: stage must be 1 or 2");

    std::vector<nn::NodePtr> trainable = gcn.parameters();
    const auto query_side = params.query_module_parameters();
    trainable.insert(trainable.end(), query_side.begin(), query_side.end());
    const auto decoder = params.decoder_parameters();
    if (stage == 2) {
        trainable.insert(trainable.end(), decoder.begin(), decoder.end());
    } else {
        // Freeze: decoder tensors become constants for graph construction, so
        // no gradient buffers are touched and the buffers stay bit-identical.
        for (const auto& p : decoder) p->requires_grad = false;
    }

    nn::Adam opt(trainable, nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8});
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher–Yates with our own index draw keeps the order reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::vector<const CaptionSample*> batch;
            for (std::size_t b = start;
                 b < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                 ++b) {
                batch.push_back(&dataset[order[b]]);
            }
            opt.zero_grad();
            auto loss = caption_loss_node(batch, gcn, params);
            nn::backward(loss);
            opt.step();
            epoch_loss += loss->scalar();
            ++n_batches;
        }
        epoch_losses.push_back(epoch_loss / n_batches);
    }

    if (stage == 1) {
        for (const auto& p : decoder) p->requires_grad = true;
    }
    return epoch_losses;
}

double greedy_token_accuracy(const std::vector<CaptionSample>& dataset, const GcnParams& gcn,
                             const CaptionerParams& params, const Vocabulary& vocab, int max_len) {
    if (dataset.empty()) throw EmptyDataset("greedy_token_accuracy: empty dataset");
    long correct = 0, total = 0;
    for (const auto& s : dataset) {
        auto queries = encode_queries(gcn_forward(s.graph, gcn), params);
        const Caption pred = decode_caption(queries, params, vocab, max_len);
        const auto& ref = s.caption.ids;
        for (std::size_t t = 1; t < ref.size(); ++t) {
            if (ref[t] == Vocabulary::kPad) break;
            ++total;
            if (t < pred.ids.size() && pred.ids[t] == ref[t]) ++correct;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace ssk
