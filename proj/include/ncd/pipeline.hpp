#pragma once

// The three training stages and the incremental variant:
//   1. rotation-prediction pretext on all images, every block trainable;
//   2. supervised fine-tune of the labelled head and the last macro-block;
//   3. joint training: CE on labelled data, pairwise BCE on unlabelled data
//      with rank-statistics pseudo-labels, ramped MSE consistency on both.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "ncd/data.hpp"
#include "ncd/errors.hpp"
#include "ncd/losses.hpp"
#include "ncd/model.hpp"
#include "ncd/rankstats.hpp"
#include "ncd/rng.hpp"
#include "ncd/tensor.hpp"

namespace ncd {

struct StageConfig {
    std::size_t epochs = 0;
    double lr = 0.1;
    std::vector<std::size_t> lr_milestones;  // epochs at which lr is multiplied by lr_decay
    double lr_decay = 0.1;
    double momentum = 0.9;
    std::set<std::size_t> frozen_blocks;
    RampUpSchedule ramp{5.0, 10.0};
    std::size_t k = 5;
    std::size_t batch_size = 128;
    bool incremental = false;
    double incremental_ce_coefficient = 0.05;
    AugmentSpec augment{};

    double lr_at(std::size_t epoch) const {
        double out = lr;
        for (std::size_t m : lr_milestones) {
            if (epoch >= m) out *= lr_decay;
        }
        return out;
    }
};

// Table-1 style switches.
struct Ablation {
    bool no_bce = false;
    bool no_ce = false;
    bool no_consistency = false;
    bool no_selfsup = false;
    bool bce_exclude_diagonal = false;
};

struct EpochRecord {
    std::size_t epoch = 0;
    LossReport loss;
    double acc = std::numeric_limits<double>::quiet_NaN();  // unlabelled ACC, NaN where not applicable
};

struct RunReport {
    std::string stage;
    std::vector<EpochRecord> epochs;
    double train_acc = std::numeric_limits<double>::quiet_NaN();  // stage-specific training accuracy
    std::string checkpoint_path;
    std::uint64_t config_digest = 0;
    std::uint64_t seed = 0;

    double final_acc() const {
        return epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : epochs.back().acc;
    }
};

// What a joint-training batch saw; handed to BatchObserver for auditing.
struct BatchTrace {
    std::size_t epoch = 0;
    const Tensor* unlabelled_features = nullptr;  // clean view
    const PairLabelMatrix* pair_labels = nullptr;
    double bce = 0.0;
    double mse = 0.0;
    double ce = 0.0;
    std::vector<int> pseudo_labels;  // incremental only, already offset by C_l
};

struct StageHooks {
    std::function<double(const Model&)> epoch_eval;  // returns unlabelled ACC
    std::function<void(const BatchTrace&)> batch_observer;
};

namespace detail {

// Cycles through shuffled epochs of [0, n) and hands out fixed-size batches.
class IndexStream {
public:
    IndexStream(std::size_t n, Rng& rng) : n_(n), rng_(&rng) {}

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        while (out.size() < count) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_->index(i)]);
        pos_ = 0;
    }

    std::size_t n_;
    Rng* rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

inline std::vector<Parameter*> collect(Model& m) {
    std::vector<Parameter*> out = m.backbone.parameters();
    for (auto* h : {&m.rotation, &m.labelled, &m.unlabelled}) {
        if (h->has_value()) {
            for (Parameter* p : (*h)->parameters()) out.push_back(p);
        }
    }
    return out;
}

inline void check_frozen(const StageConfig& cfg, const Model& m) {
    for (std::size_t b : cfg.frozen_blocks) {
        if (b >= m.config().num_blocks()) throw ArgumentError("frozen block " + std::to_string(b) + " does not exist");
    }
}

inline double mean_or_zero(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

inline std::vector<int> take_labels(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
}

} // namespace detail

// Rotation pretext on unlabelled images only. Each image in a batch is
// turned by a uniformly drawn multiple of 90 degrees; the 4-way head learns
// which. train_acc is the last epoch's rotation accuracy.
inline RunReport stage1_selfsup(Model& model, const ImageSet& images, const StageConfig& cfg) {
    if (model.stage != Stage::initial) throw StateError("self-supervised pretraining expects a fresh model");
    if (images.size() == 0) throw ArgumentError("self-supervised pretraining needs images");
    const ImageShape shape = images.shape;
    Rng rng = model.rng.split("pretrain");
    if (!model.rotation) {
        Rng head_rng = model.rng.split("rotation-head");
        model.rotation = Head(HeadKind::rotation, model.backbone.feature_dim(), 4, head_rng);
    }
    model.backbone.set_frozen_blocks({});
    Sgd opt(detail::collect(model), cfg.momentum);

    RunReport report;
    report.stage = "pretrain";
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        double ce_sum = 0.0;
        std::size_t batches = 0, correct = 0, seen = 0;
        for (const auto& idx : make_batches(images.size(), cfg.batch_size, rng)) {
            Tensor x({idx.size(), shape.pixels()});
            std::vector<int> turns(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                turns[i] = static_cast<int>(rng.index(4));
                auto r = rotate_right_angle(images.image(idx[i]), shape, turns[i]);
                std::copy(r.begin(), r.end(), x.row(i).begin());
            }
            Backbone::Cache cache;
            Tensor z = model.backbone.forward(x, &cache);
            Tensor p = model.rotation->forward(z);
            Tensor gp(p.shape());
            ce_sum += cross_entropy(p, turns, &gp);
            for (std::size_t i = 0; i < idx.size(); ++i) correct += static_cast<int>(argmax(p.row(i))) == turns[i] ? 1 : 0;
            seen += idx.size();
            Tensor gz = model.rotation->backward(z, p, gp);
            model.backbone.backward(cache, gz);
            opt.step(lr);
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = total_loss(detail::mean_or_zero(ce_sum, batches), 0.0, 0.0, 0.0);
        report.epochs.push_back(rec);
        report.train_acc = seen == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(seen);
    }
    model.stage = Stage::pretrained;
    model.rng.advance();
    return report;
}

// Supervised fine-tune of a fresh labelled head plus the unfrozen blocks.
// Accepts a pretrained model, or a fresh one when self-supervision is ablated.
// train_acc is the clean-data accuracy on the labelled set afterwards.
inline RunReport stage2_supervised(Model& model, const Dataset& labelled, const StageConfig& cfg) {
    if (model.stage != Stage::pretrained && model.stage != Stage::initial) {
        throw StateError(std::string("supervised fine-tuning cannot start from a ") + stage_name(model.stage) + " model");
    }
    if (labelled.size() == 0) throw ArgumentError("supervised fine-tuning needs labelled samples");
    detail::check_frozen(cfg, model);
    Rng rng = model.rng.split("finetune");
    Rng head_rng = model.rng.split("labelled-head");
    model.labelled = Head(HeadKind::labelled, model.backbone.feature_dim(), labelled.num_classes, head_rng);
    model.backbone.set_frozen_blocks(cfg.frozen_blocks);
    if (model.rotation) {
        model.rotation->layer().weight.frozen = true;
        model.rotation->layer().bias.frozen = true;
    }
    Sgd opt(detail::collect(model), cfg.momentum);

    RunReport report;
    report.stage = "finetune";
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        double ce_sum = 0.0;
        std::size_t batches = 0;
        for (const auto& idx : make_batches(labelled.size(), cfg.batch_size, rng)) {
            Tensor x = gather_rows(labelled.images, idx);
            const auto y = detail::take_labels(labelled.labels, idx);
            Backbone::Cache cache;
            Tensor z = model.backbone.forward(x, &cache);
            Tensor p = model.labelled->forward(z);
            Tensor gp(p.shape());
            ce_sum += cross_entropy(p, y, &gp);
            Tensor gz = model.labelled->backward(z, p, gp);
            model.backbone.backward(cache, gz);
            opt.step(lr);
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = total_loss(detail::mean_or_zero(ce_sum, batches), 0.0, 0.0, 0.0);
        report.epochs.push_back(rec);
    }
    {
        Tensor z = model.backbone.forward(gather_rows(labelled.images, [&] {
            std::vector<std::size_t> all(labelled.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            return all;
        }()));
        Tensor p = model.labelled->forward(z);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < p.rows(); ++i) ok += static_cast<int>(argmax(p.row(i))) == labelled.labels[i] ? 1 : 0;
        report.train_acc = static_cast<double>(ok) / static_cast<double>(p.rows());
    }
    model.stage = Stage::finetuned;
    model.rng.advance();
    return report;
}

namespace detail {

// One joint-training batch: clean and augmented views of a labelled and an
// unlabelled sub-batch.
struct JointBatch {
    Tensor x_l, x_la, x_u, x_ua;
    std::vector<int> y_l;
};

struct JointTerms {
    double ce = 0.0;   // labelled CE, plus pseudo_weight * pseudo-label CE when incremental
    double bce = 0.0;
    double mse = 0.0;  // unweighted; the objective uses omega * mse
    Tensor z_u;        // clean unlabelled features
    PairLabelMatrix s;
    std::vector<int> pseudo_labels;
};

// Forward pass and gradient accumulation for the objective
//   ce + bce + omega * mse
// over every trainable parameter of the model. Does not step the optimizer.
inline JointTerms joint_batch(Model& model, const JointBatch& b, std::size_t c_l, const RankStatConfig& rank_cfg,
                              double omega, double pseudo_weight, const Ablation& ablation, bool incremental,
                              bool accumulate = true) {
    Backbone::Cache c_u, c_ua, c_lc, c_la;
    JointTerms out;
    out.z_u = model.backbone.forward(b.x_u, &c_u);
    const Tensor z_ua = model.backbone.forward(b.x_ua, &c_ua);
    const Tensor z_l = model.backbone.forward(b.x_l, &c_lc);
    const Tensor z_la = model.backbone.forward(b.x_la, &c_la);

    Head& head_l = *model.labelled;
    Head& head_u = *model.unlabelled;
    const Tensor p_u = head_u.forward(out.z_u);
    const Tensor p_ua = head_u.forward(z_ua);
    const Tensor p_l = head_l.forward(z_l);
    const Tensor p_la = head_l.forward(z_la);
    Tensor g_u(p_u.shape()), g_ua(p_ua.shape()), g_l(p_l.shape()), g_la(p_la.shape());

    out.s = pair_labels(out.z_u, rank_cfg);
    if (!ablation.no_ce) out.ce = cross_entropy(p_l, b.y_l, &g_l);
    if (!ablation.no_bce) out.bce = pairwise_bce(p_u, out.s, &g_u, !ablation.bce_exclude_diagonal);
    out.mse = consistency_mse(p_l, p_la, &g_l, &g_la, omega) + consistency_mse(p_u, p_ua, &g_u, &g_ua, omega);

    Tensor p_ext, g_ext;
    if (incremental) {
        // Pseudo-labels from the unlabelled head, routed to the new slots of the extended head.
        out.pseudo_labels.resize(p_u.rows());
        for (std::size_t i = 0; i < p_u.rows(); ++i) {
            out.pseudo_labels[i] = static_cast<int>(c_l + predict_unlabelled(p_u.row(i)));
        }
        p_ext = head_l.forward(out.z_u);
        g_ext = Tensor(p_ext.shape());
        out.ce += pseudo_weight * cross_entropy(p_ext, out.pseudo_labels, &g_ext, pseudo_weight);
    }
    if (!accumulate) return out;

    Tensor gz_u = head_u.backward(out.z_u, p_u, g_u);
    const Tensor gz_ua = head_u.backward(z_ua, p_ua, g_ua);
    const Tensor gz_l = head_l.backward(z_l, p_l, g_l);
    const Tensor gz_la = head_l.backward(z_la, p_la, g_la);
    if (incremental) {
        const Tensor gz_ext = head_l.backward(out.z_u, p_ext, g_ext);
        for (std::size_t i = 0; i < gz_u.size(); ++i) gz_u[i] += gz_ext[i];
    }
    model.backbone.backward(c_u, gz_u);
    model.backbone.backward(c_ua, gz_ua);
    model.backbone.backward(c_lc, gz_l);
    model.backbone.backward(c_la, gz_la);
    return out;
}

inline RunReport joint_training(Model& model, const Dataset& labelled, const ImageSet& unlabelled,
                                std::size_t unlabelled_classes, const StageConfig& cfg, const Ablation& ablation,
                                const StageHooks& hooks) {
    if (model.stage != Stage::finetuned) {
        throw StateError(std::string("joint training needs a fine-tuned model (stage-2 checkpoint), got a ") +
                         stage_name(model.stage) + " model");
    }
    if (!model.labelled || model.labelled->kind() != HeadKind::labelled) throw StateError("model has no labelled head");
    if (labelled.size() == 0 || unlabelled.size() == 0) throw ArgumentError("joint training needs both subsets");
    if (unlabelled_classes == 0) throw ArgumentError("number of new classes must be positive");
    const std::size_t d = model.backbone.feature_dim();
    if (cfg.k < 1 || cfg.k > d) {
        throw ArgumentError("rank statistics k=" + std::to_string(cfg.k) + " outside [1, " + std::to_string(d) + "]");
    }
    check_frozen(cfg, model);
    const std::size_t c_l = model.labelled->outputs();
    const ImageShape shape = unlabelled.shape;

    Rng rng = model.rng.split("discover");
    {
        Rng head_rng = model.rng.split("unlabelled-head");
        model.unlabelled = Head(HeadKind::unlabelled, d, unlabelled_classes, head_rng);
    }
    if (cfg.incremental) {
        Rng ext_rng = model.rng.split("extended-head");
        model.labelled = extend_head(*model.labelled, unlabelled_classes, ext_rng);
    }
    model.backbone.set_frozen_blocks(cfg.frozen_blocks);
    if (model.rotation) {
        model.rotation->layer().weight.frozen = true;
        model.rotation->layer().bias.frozen = true;
    }
    Sgd opt(collect(model), cfg.momentum);
    const RankStatConfig rank_cfg{cfg.k};
    const std::size_t half = std::max<std::size_t>(1, cfg.batch_size / 2);
    IndexStream labelled_stream(labelled.size(), rng);

    RunReport report;
    report.stage = cfg.incremental ? "incremental" : "discover";
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        const double t = static_cast<double>(epoch);
        const double omega = ablation.no_consistency ? 0.0 : ramp_up(cfg.ramp, t);
        const double pseudo_weight =
            cfg.incremental ? cfg.incremental_ce_coefficient * ramp_up(RampUpSchedule{1.0, cfg.ramp.length}, t) : 0.0;
        double ce_sum = 0.0, bce_sum = 0.0, mse_sum = 0.0;
        std::size_t batches = 0;
        for (const auto& u_idx : make_batches(unlabelled.size(), half, rng)) {
            const auto l_idx = labelled_stream.next(half);
            const std::vector<int> y_l = take_labels(labelled.labels, l_idx);

            JointBatch batch;
            batch.x_u = gather_rows(unlabelled.images, u_idx);
            batch.x_l = gather_rows(labelled.images, l_idx);
            batch.x_ua = augment_rows(batch.x_u, shape, cfg.augment, rng);
            batch.x_la = augment_rows(batch.x_l, shape, cfg.augment, rng);
            batch.y_l = y_l;

            const JointTerms terms = joint_batch(model, batch, c_l, rank_cfg, omega, pseudo_weight, ablation, cfg.incremental);
            const double ce = terms.ce, bce = terms.bce, mse = terms.mse;
            BatchTrace trace;
            trace.pseudo_labels = terms.pseudo_labels;
            opt.step(lr);

            if (hooks.batch_observer) {
                trace.epoch = epoch;
                trace.unlabelled_features = &terms.z_u;
                trace.pair_labels = &terms.s;
                trace.ce = ce;
                trace.bce = bce;
                trace.mse = mse;
                hooks.batch_observer(trace);
            }
            ce_sum += ce;
            bce_sum += bce;
            mse_sum += mse;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = total_loss(mean_or_zero(ce_sum, batches), mean_or_zero(bce_sum, batches), mean_or_zero(mse_sum, batches), omega);
        if (hooks.epoch_eval) rec.acc = hooks.epoch_eval(model);
        report.epochs.push_back(rec);
    }
    model.stage = cfg.incremental ? Stage::incremental : Stage::discovered;
    model.rng.advance();
    return report;
}

} // namespace detail

inline RunReport stage3_joint(Model& model, const Dataset& labelled, const ImageSet& unlabelled, std::size_t unlabelled_classes,
                              StageConfig cfg, const Ablation& ablation = {}, const StageHooks& hooks = {}) {
    cfg.incremental = false;
    return detail::joint_training(model, labelled, unlabelled, unlabelled_classes, cfg, ablation, hooks);
}

// Joint training with the labelled head widened to C_l + C_u outputs and an
// extra, ramped cross-entropy on the unlabelled images against the unlabelled
// head's on-the-fly argmax. The BCE term stays active.
inline RunReport run_incremental(Model& model, const Dataset& labelled, const ImageSet& unlabelled,
                                 std::size_t unlabelled_classes, StageConfig cfg, const Ablation& ablation = {},
                                 const StageHooks& hooks = {}) {
    cfg.incremental = true;
    return detail::joint_training(model, labelled, unlabelled, unlabelled_classes, cfg, ablation, hooks);
}

} // namespace ncd
