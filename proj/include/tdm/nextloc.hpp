#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tdm/errors.hpp"
#include "tdm/rng.hpp"

// Next-location prediction. Location traces are token sequences (a trace is
// a sentence, a tower a word): a most-frequent baseline, an order-1 Markov
// chain with Laplace smoothing, and a recurrent network with a 4-gate memory
// cell trained by truncated backpropagation through time. Training is double
// precision and single-threaded so gradient checks and reruns are exact.

namespace tdm::nextloc {

struct Corpus {
    std::vector<std::vector<int>> sequences;  // token ids in [0, vocab_size)
    int vocab_size = 0;
};

/// Token table for mapping location ids to dense token ids; unknown lookups
/// map to the trailing "<unk>" token.
struct Vocab {
    std::vector<std::string> tokens;
    std::map<std::string, int> pos;
    int unk = -1;

    static Vocab build(std::span<const std::vector<std::string>> sequences) {
        Vocab v;
        std::map<std::string, int> seen;
        for (const auto& seq : sequences)
            for (const auto& tok : seq) seen.emplace(tok, 0);
        for (const auto& [tok, _] : seen) {
            v.pos.emplace(tok, int(v.tokens.size()));
            v.tokens.push_back(tok);
        }
        v.unk = int(v.tokens.size());
        v.pos.emplace("<unk>", v.unk);
        v.tokens.push_back("<unk>");
        return v;
    }

    int id(const std::string& token) const {
        auto it = pos.find(token);
        return it == pos.end() ? unk : it->second;
    }
    int size() const { return int(tokens.size()); }
};

// ---------------------------------------------------------------------------
// Most-frequent baseline
// ---------------------------------------------------------------------------

/// Modal token of the history; ties go to the most recently seen among the
/// tied tokens. Throws DomainError on empty history.
inline int predict_frequent(std::span<const int> history) {
    if (history.empty()) throw DomainError("predict_frequent: empty history");
    std::map<int, std::pair<int, std::size_t>> stats;  // token -> (count, last index)
    for (std::size_t i = 0; i < history.size(); ++i) {
        auto& [count, last] = stats[history[i]];
        ++count;
        last = i;
    }
    int best = history[0];
    int best_count = -1;
    std::size_t best_last = 0;
    for (const auto& [tok, cl] : stats) {
        const auto& [count, last] = cl;
        if (count > best_count || (count == best_count && last > best_last)) {
            best = tok;
            best_count = count;
            best_last = last;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Markov model
// ---------------------------------------------------------------------------

struct MarkovModel {
    int n = 0;
    double smoothing = 0.1;
    std::vector<double> counts;  // n x n transition counts
    int global_mode = 0;         // corpus-wide modal token

    double count(int a, int b) const { return counts[std::size_t(a) * std::size_t(n) + std::size_t(b)]; }

    /// Smoothed P(next | last).
    double probability(int last, int next) const {
        double row_sum = 0;
        for (int b = 0; b < n; ++b) row_sum += count(last, b);
        return (count(last, next) + smoothing) / (row_sum + smoothing * n);
    }

    /// argmax_b P(b | last); unseen last token (or out-of-vocabulary) falls
    /// back to the corpus-global modal token. Ties break ascending token id.
    int predict(int last) const {
        if (last < 0 || last >= n) return global_mode;
        double row_sum = 0;
        for (int b = 0; b < n; ++b) row_sum += count(last, b);
        if (row_sum == 0) return global_mode;
        int best = 0;
        double best_count = -1;
        for (int b = 0; b < n; ++b) {
            if (count(last, b) > best_count) {
                best_count = count(last, b);
                best = b;
            }
        }
        return best;
    }
};

inline MarkovModel fit_markov(const Corpus& corpus, double smoothing = 0.1) {
    MarkovModel m;
    m.n = corpus.vocab_size;
    m.smoothing = smoothing;
    m.counts.assign(std::size_t(m.n) * std::size_t(m.n), 0.0);
    std::vector<double> occurrences(std::size_t(m.n), 0.0);
    std::size_t transitions = 0;
    for (const auto& seq : corpus.sequences) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (seq[i] < 0 || seq[i] >= m.n) throw DomainError("fit_markov: token out of vocabulary");
            occurrences[std::size_t(seq[i])] += 1;
            if (i + 1 < seq.size()) {
                m.counts[std::size_t(seq[i]) * std::size_t(m.n) + std::size_t(seq[i + 1])] += 1;
                ++transitions;
            }
        }
    }
    if (transitions == 0) throw DomainError("fit_markov: corpus has no transitions");
    double best = -1;
    for (int t = 0; t < m.n; ++t) {
        if (occurrences[std::size_t(t)] > best) {
            best = occurrences[std::size_t(t)];
            m.global_mode = t;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Recurrent model (4-gate memory cell)
// ---------------------------------------------------------------------------

struct LstmHyperparams {
    int embed_dim = 16;
    int hidden_dim = 32;
    int epochs = 30;
    /// Step size for the per-sequence SGD update of the mean next-token
    /// cross-entropy. Configurable, non-normative.
    double learning_rate = 0.3;
    double clip_norm = 5.0;
    int bptt_window = 32;  // gradient truncation window; <= 0 means full
};

struct RecurrentModel {
    int vocab = 0;
    int embed_dim = 0;
    int hidden_dim = 0;
    // gate blocks ordered [input, forget, candidate, output], each hidden_dim wide
    std::vector<double> embed;  // vocab x embed_dim
    std::vector<double> w_x;    // embed_dim x 4H
    std::vector<double> w_h;    // hidden_dim x 4H
    std::vector<double> b;      // 4H
    std::vector<double> w_out;  // hidden_dim x vocab
    std::vector<double> b_out;  // vocab
    LstmHyperparams hyper;
    std::uint64_t seed = 0;
    std::vector<double> epoch_loss;

    std::vector<double> step_probs(std::span<const int> history) const;
    int predict(std::span<const int> history) const;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepState {
    std::vector<double> x, gates, c, h, tanh_c, probs;
    int token = 0, target = -1;
};

/// One cell step. h_prev/c_prev are the incoming state; fills `out`.
inline void lstm_step(const RecurrentModel& m, int token, std::span<const double> h_prev,
                      std::span<const double> c_prev, StepState& out) {
    const int H = m.hidden_dim, E = m.embed_dim;
    out.token = token;
    out.x.assign(m.embed.begin() + std::ptrdiff_t(token) * E,
                 m.embed.begin() + std::ptrdiff_t(token + 1) * E);
    out.gates.assign(std::size_t(4 * H), 0.0);
    for (int e = 0; e < E; ++e) {
        const double xe = out.x[std::size_t(e)];
        if (xe == 0) continue;
        const double* row = m.w_x.data() + std::size_t(e) * std::size_t(4 * H);
        for (int j = 0; j < 4 * H; ++j) out.gates[std::size_t(j)] += xe * row[j];
    }
    for (int h = 0; h < H; ++h) {
        const double hv = h_prev[std::size_t(h)];
        if (hv == 0) continue;
        const double* row = m.w_h.data() + std::size_t(h) * std::size_t(4 * H);
        for (int j = 0; j < 4 * H; ++j) out.gates[std::size_t(j)] += hv * row[j];
    }
    for (int j = 0; j < 4 * H; ++j) out.gates[std::size_t(j)] += m.b[std::size_t(j)];
    // activate: blocks [i, f, g, o]
    for (int h = 0; h < H; ++h) {
        out.gates[std::size_t(h)] = sigmoid(out.gates[std::size_t(h)]);              // i
        out.gates[std::size_t(H + h)] = sigmoid(out.gates[std::size_t(H + h)]);      // f
        out.gates[std::size_t(2 * H + h)] = std::tanh(out.gates[std::size_t(2 * H + h)]);  // g
        out.gates[std::size_t(3 * H + h)] = sigmoid(out.gates[std::size_t(3 * H + h)]);    // o
    }
    out.c.resize(std::size_t(H));
    out.h.resize(std::size_t(H));
    out.tanh_c.resize(std::size_t(H));
    for (int h = 0; h < H; ++h) {
        const double i = out.gates[std::size_t(h)];
        const double f = out.gates[std::size_t(H + h)];
        const double g = out.gates[std::size_t(2 * H + h)];
        const double o = out.gates[std::size_t(3 * H + h)];
        out.c[std::size_t(h)] = f * c_prev[std::size_t(h)] + i * g;
        out.tanh_c[std::size_t(h)] = std::tanh(out.c[std::size_t(h)]);
        out.h[std::size_t(h)] = o * out.tanh_c[std::size_t(h)];
    }
    // output distribution
    out.probs.assign(std::size_t(m.vocab), 0.0);
    for (int v = 0; v < m.vocab; ++v) out.probs[std::size_t(v)] = m.b_out[std::size_t(v)];
    for (int h = 0; h < H; ++h) {
        const double hv = out.h[std::size_t(h)];
        if (hv == 0) continue;
        const double* row = m.w_out.data() + std::size_t(h) * std::size_t(m.vocab);
        for (int v = 0; v < m.vocab; ++v) out.probs[std::size_t(v)] += hv * row[v];
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : out.probs) mx = std::max(mx, l);
    double sum = 0;
    for (double& l : out.probs) {
        l = std::exp(l - mx);
        sum += l;
    }
    for (double& l : out.probs) l /= sum;
}

}  // namespace detail

inline std::vector<double> RecurrentModel::step_probs(std::span<const int> history) const {
    if (history.empty()) throw DomainError("predict: empty history");
    std::vector<double> h(std::size_t(hidden_dim), 0.0), c(std::size_t(hidden_dim), 0.0);
    detail::StepState state;
    for (int tok : history) {
        if (tok < 0 || tok >= vocab) throw DomainError("predict: token out of vocabulary");
        detail::lstm_step(*this, tok, h, c, state);
        h = state.h;
        c = state.c;
    }
    return state.probs;
}

/// argmax of the final-step distribution; ties break ascending token id.
inline int RecurrentModel::predict(std::span<const int> history) const {
    const auto probs = step_probs(history);
    int best = 0;
    double best_p = -1;
    for (int v = 0; v < vocab; ++v) {
        if (probs[std::size_t(v)] > best_p) {
            best_p = probs[std::size_t(v)];
            best = v;
        }
    }
    return best;
}

struct RnnGradients {
    std::vector<double> embed, w_x, w_h, b, w_out, b_out;

    explicit RnnGradients(const RecurrentModel& m)
        : embed(m.embed.size(), 0.0),
          w_x(m.w_x.size(), 0.0),
          w_h(m.w_h.size(), 0.0),
          b(m.b.size(), 0.0),
          w_out(m.w_out.size(), 0.0),
          b_out(m.b_out.size(), 0.0) {}

    double squared_norm() const {
        double s = 0;
        for (const auto* v : {&embed, &w_x, &w_h, &b, &w_out, &b_out})
            for (double g : *v) s += g * g;
        return s;
    }
    void scale(double f) {
        for (auto* v : {&embed, &w_x, &w_h, &b, &w_out, &b_out})
            for (double& g : *v) g *= f;
    }
};

namespace detail {

/// Forward + backward over one sequence. Mean next-token cross-entropy;
/// gradients truncated at `window` steps (<= 0 for full BPTT), accumulated
/// into `grads` when non-null.
inline double sequence_pass(const RecurrentModel& m, std::span<const int> seq, int window,
                            RnnGradients* grads) {
    if (seq.size() < 2) throw DomainError("sequence too short for next-token loss");
    const int H = m.hidden_dim, E = m.embed_dim, V = m.vocab;
    const std::size_t steps = seq.size() - 1;
    const double inv_steps = 1.0 / double(steps);

    std::vector<StepState> trace(steps);
    std::vector<double> h(std::size_t(H), 0.0), c(std::size_t(H), 0.0);
    std::vector<std::vector<double>> h_in(steps), c_in(steps);  // incoming state per step
    double loss = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        const int tok = seq[t], target = seq[t + 1];
        if (tok < 0 || tok >= V || target < 0 || target >= V)
            throw DomainError("token out of vocabulary");
        h_in[t] = h;
        c_in[t] = c;
        lstm_step(m, tok, h, c, trace[t]);
        trace[t].target = target;
        h = trace[t].h;
        c = trace[t].c;
        loss -= std::log(std::max(trace[t].probs[std::size_t(target)], 1e-300));
    }
    loss *= inv_steps;
    if (!grads) return loss;

    const std::size_t w = window <= 0 ? steps : std::size_t(window);
    // process in truncation chunks; gradients do not flow across boundaries
    for (std::size_t chunk_end = steps; chunk_end > 0;) {
        const std::size_t chunk_start = chunk_end > w ? chunk_end - w : 0;
        std::vector<double> dh(std::size_t(H), 0.0), dc(std::size_t(H), 0.0);
        for (std::size_t t = chunk_end; t-- > chunk_start;) {
            const StepState& s = trace[t];
            // output layer
            std::vector<double> dlogits(static_cast<std::size_t>(V));
            for (int v = 0; v < V; ++v) dlogits[std::size_t(v)] = s.probs[std::size_t(v)] * inv_steps;
            dlogits[std::size_t(s.target)] -= inv_steps;
            for (int v = 0; v < V; ++v) grads->b_out[std::size_t(v)] += dlogits[std::size_t(v)];
            for (int hh = 0; hh < H; ++hh) {
                const double hv = s.h[std::size_t(hh)];
                double acc = 0;
                const double* wrow = m.w_out.data() + std::size_t(hh) * std::size_t(V);
                double* grow = grads->w_out.data() + std::size_t(hh) * std::size_t(V);
                for (int v = 0; v < V; ++v) {
                    grow[v] += hv * dlogits[std::size_t(v)];
                    acc += wrow[v] * dlogits[std::size_t(v)];
                }
                dh[std::size_t(hh)] += acc;
            }
            // cell backward
            std::vector<double> da(std::size_t(4 * H));
            for (int hh = 0; hh < H; ++hh) {
                const double i = s.gates[std::size_t(hh)];
                const double f = s.gates[std::size_t(H + hh)];
                const double g = s.gates[std::size_t(2 * H + hh)];
                const double o = s.gates[std::size_t(3 * H + hh)];
                const double tc = s.tanh_c[std::size_t(hh)];
                const double dho = dh[std::size_t(hh)];
                const double d_o = dho * tc;
                double d_c = dho * o * (1 - tc * tc) + dc[std::size_t(hh)];
                const double d_i = d_c * g;
                const double d_f = d_c * c_in[t][std::size_t(hh)];
                const double d_g = d_c * i;
                da[std::size_t(hh)] = d_i * i * (1 - i);
                da[std::size_t(H + hh)] = d_f * f * (1 - f);
                da[std::size_t(2 * H + hh)] = d_g * (1 - g * g);
                da[std::size_t(3 * H + hh)] = d_o * o * (1 - o);
                dc[std::size_t(hh)] = d_c * f;  // flows to t-1
            }
            for (int j = 0; j < 4 * H; ++j) grads->b[std::size_t(j)] += da[std::size_t(j)];
            // w_x, embedding
            double* ge = grads->embed.data() + std::size_t(s.token) * std::size_t(E);
            for (int e = 0; e < E; ++e) {
                const double xe = s.x[std::size_t(e)];
                const double* wrow = m.w_x.data() + std::size_t(e) * std::size_t(4 * H);
                double* grow = grads->w_x.data() + std::size_t(e) * std::size_t(4 * H);
                double acc = 0;
                for (int j = 0; j < 4 * H; ++j) {
                    grow[j] += xe * da[std::size_t(j)];
                    acc += wrow[j] * da[std::size_t(j)];
                }
                ge[e] += acc;
            }
            // w_h and dh for t-1
            std::vector<double> dh_prev(std::size_t(H), 0.0);
            for (int hh = 0; hh < H; ++hh) {
                const double hv = h_in[t][std::size_t(hh)];
                const double* wrow = m.w_h.data() + std::size_t(hh) * std::size_t(4 * H);
                double* grow = grads->w_h.data() + std::size_t(hh) * std::size_t(4 * H);
                double acc = 0;
                for (int j = 0; j < 4 * H; ++j) {
                    grow[j] += hv * da[std::size_t(j)];
                    acc += wrow[j] * da[std::size_t(j)];
                }
                dh_prev[std::size_t(hh)] = acc;
            }
            dh = std::move(dh_prev);
        }
        chunk_end = chunk_start;
    }
    return loss;
}

}  // namespace detail

/// Mean next-token cross-entropy of one sequence under the model.
inline double rnn_sequence_loss(const RecurrentModel& m, std::span<const int> seq) {
    return detail::sequence_pass(m, seq, 0, nullptr);
}

/// Full-BPTT analytic gradients of rnn_sequence_loss.
inline RnnGradients rnn_sequence_gradients(const RecurrentModel& m, std::span<const int> seq) {
    RnnGradients grads(m);
    detail::sequence_pass(m, seq, 0, &grads);
    return grads;
}

/// Trains with truncated BPTT, one clipped SGD step per sequence.
/// Deterministic given the seed.
inline RecurrentModel fit_rnn(const Corpus& corpus, const LstmHyperparams& hyper,
                              std::uint64_t seed) {
    if (corpus.vocab_size < 2) throw DomainError("fit_rnn: vocabulary must have >= 2 tokens");
    std::size_t usable = 0;
    for (const auto& seq : corpus.sequences)
        if (seq.size() >= 2) ++usable;
    if (usable == 0) throw DomainError("fit_rnn: no sequences of length >= 2");

    RecurrentModel m;
    m.vocab = corpus.vocab_size;
    m.embed_dim = hyper.embed_dim;
    m.hidden_dim = hyper.hidden_dim;
    m.hyper = hyper;
    m.seed = seed;
    const int H = m.hidden_dim;
    Rng rng = Rng(seed).substream("rnn-init");
    auto init = [&rng](std::vector<double>& v, std::size_t n, double scale) {
        v.resize(n);
        for (double& x : v) x = rng.uniform(-scale, scale);
    };
    init(m.embed, std::size_t(m.vocab) * std::size_t(m.embed_dim), 0.3);
    init(m.w_x, std::size_t(m.embed_dim) * std::size_t(4 * H), 1.0 / std::sqrt(double(m.embed_dim)));
    init(m.w_h, std::size_t(H) * std::size_t(4 * H), 1.0 / std::sqrt(double(H)));
    init(m.w_out, std::size_t(H) * std::size_t(m.vocab), 1.0 / std::sqrt(double(H)));
    m.b.assign(std::size_t(4 * H), 0.0);
    for (int h = 0; h < H; ++h) m.b[std::size_t(H + h)] = 1.0;  // forget gate bias
    m.b_out.assign(std::size_t(m.vocab), 0.0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        double loss_sum = 0;
        std::size_t count = 0;
        for (const auto& seq : corpus.sequences) {
            if (seq.size() < 2) continue;
            RnnGradients grads(m);
            const double loss = detail::sequence_pass(m, seq, hyper.bptt_window, &grads);
            if (!std::isfinite(loss)) throw TrainingError("fit_rnn: non-finite loss");
            loss_sum += loss;
            ++count;
            const double norm = std::sqrt(grads.squared_norm());
            if (hyper.clip_norm > 0 && norm > hyper.clip_norm)
                grads.scale(hyper.clip_norm / norm);
            const double lr = hyper.learning_rate;
            for (std::size_t i = 0; i < m.embed.size(); ++i) m.embed[i] -= lr * grads.embed[i];
            for (std::size_t i = 0; i < m.w_x.size(); ++i) m.w_x[i] -= lr * grads.w_x[i];
            for (std::size_t i = 0; i < m.w_h.size(); ++i) m.w_h[i] -= lr * grads.w_h[i];
            for (std::size_t i = 0; i < m.b.size(); ++i) m.b[i] -= lr * grads.b[i];
            for (std::size_t i = 0; i < m.w_out.size(); ++i) m.w_out[i] -= lr * grads.w_out[i];
            for (std::size_t i = 0; i < m.b_out.size(); ++i) m.b_out[i] -= lr * grads.b_out[i];
        }
        m.epoch_loss.push_back(loss_sum / double(count));
    }
    return m;
}

/// Fraction of next-token steps the model predicts exactly (training-style
/// accuracy over all prefixes).
inline double next_token_accuracy(const RecurrentModel& m, const Corpus& corpus) {
    std::size_t correct = 0, total = 0;
    std::vector<int> prefix;
    for (const auto& seq : corpus.sequences) {
        if (seq.size() < 2) continue;
        for (std::size_t t = 1; t < seq.size(); ++t) {
            prefix.assign(seq.begin(), seq.begin() + std::ptrdiff_t(t));
            if (m.predict(prefix) == seq[t]) ++correct;
            ++total;
        }
    }
    return total == 0 ? 0.0 : double(correct) / double(total);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
    double markov_smoothing = 0.1;
    LstmHyperparams rnn;
    bool include_rnn = true;
    std::uint64_t seed = 0;
};

struct EvalRow {
    std::string model;
    double accuracy = 0;
    double improvement = 0;  // relative to the naive baseline
};

struct EvalResult {
    std::vector<EvalRow> rows;
    int n_test = 0;
};

/// Leave-last-out evaluation: for each sequence of length >= 2, the prefix is
/// history and the final token the test target. Markov and recurrent models
/// are fitted on the prefixes only. Accuracy is the fraction of users whose
/// held-out next location is predicted exactly.
inline EvalResult evaluate(const Corpus& corpus, const EvaluateOptions& options = {}) {
    std::vector<std::vector<int>> prefixes;
    std::vector<int> targets;
    for (const auto& seq : corpus.sequences) {
        if (seq.size() < 2) continue;
        prefixes.emplace_back(seq.begin(), seq.end() - 1);
        targets.push_back(seq.back());
    }
    if (targets.empty()) throw DomainError("evaluate: empty test set");

    Corpus train;
    train.vocab_size = corpus.vocab_size;
    train.sequences = prefixes;

    EvalResult result;
    result.n_test = int(targets.size());

    auto accuracy_of = [&](const std::function<int(std::span<const int>)>& predictor) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < prefixes.size(); ++i)
            if (predictor(prefixes[i]) == targets[i]) ++correct;
        return double(correct) / double(targets.size());
    };

    const double naive = accuracy_of([](std::span<const int> h) { return predict_frequent(h); });
    result.rows.push_back({"naive", naive, 0.0});

    const MarkovModel markov = fit_markov(train, options.markov_smoothing);
    const double markov_acc =
        accuracy_of([&](std::span<const int> h) { return markov.predict(h.back()); });
    result.rows.push_back(
        {"markov", markov_acc,
         naive > 0 ? (markov_acc - naive) / naive : std::numeric_limits<double>::quiet_NaN()});

    if (options.include_rnn) {
        const RecurrentModel rnn = fit_rnn(train, options.rnn, options.seed);
        const double rnn_acc = accuracy_of([&](std::span<const int> h) { return rnn.predict(h); });
        result.rows.push_back(
            {"rnn", rnn_acc,
             naive > 0 ? (rnn_acc - naive) / naive : std::numeric_limits<double>::quiet_NaN()});
    }
    return result;
}

// ---------------------------------------------------------------------------
// should_send
// ---------------------------------------------------------------------------

/// A recommendation message is needed only when the predicted next location
/// differs from the recommended one at the configured resolution.
inline bool should_send(const std::string& predicted, const std::string& recommended,
                        const std::function<std::string(const std::string&)>& resolution = {}) {
    if (!resolution) return predicted != recommended;
    return resolution(predicted) != resolution(recommended);
}

}  // namespace tdm::nextloc
