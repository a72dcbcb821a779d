// Library walkthrough without the CLI or config files: generate glyphs, hold
// three classes out as "new", run the three stages and compare the discovered
// clusters against k-means on the fine-tuned features.

#include <cstdio>

#include "ncd/data.hpp"
#include "ncd/eval.hpp"
#include "ncd/model.hpp"
#include "ncd/pipeline.hpp"

int main() {
    using namespace ncd;
    const Dataset all = synth_shapes(200, 6, 101);
    const SplitResult split = apply_split(all, SplitSpec{{0, 1, 2}, {3, 4, 5}});

    Model model(BackboneConfig{}, 1);

    StageConfig s1;
    s1.epochs = 30;
    s1.lr_milestones = {21};
    const RunReport r1 = stage1_selfsup(model, concat(strip_labels(split.labelled), strip_labels(split.unlabelled)), s1);
    std::printf("rotation accuracy after pretraining: %.3f\n", r1.train_acc);

    StageConfig s2;
    s2.epochs = 20;
    s2.lr_milestones = {14};
    s2.frozen_blocks = {0, 1, 2};
    const RunReport r2 = stage2_supervised(model, split.labelled, s2);
    std::printf("labelled accuracy after fine-tuning: %.3f\n", r2.train_acc);

    const Tensor feats = extract_features(model, split.unlabelled.images);
    const auto km = kmeans_baseline(feats, 3, 1);
    std::printf("k-means on fine-tuned features:      %.3f\n", clustering_acc(km, split.unlabelled.labels, 3).acc);

    StageConfig s3;
    s3.epochs = 40;
    s3.lr = 0.03;
    s3.lr_milestones = {28};
    s3.frozen_blocks = {0, 1, 2};
    s3.augment = AugmentSpec{0.5, 0};
    StageHooks hooks;
    hooks.epoch_eval = [&](const Model& m) { return unlabelled_acc(m, split.unlabelled); };
    const RunReport r3 = stage3_joint(model, split.labelled, strip_labels(split.unlabelled), 3, s3, {}, hooks);
    for (std::size_t e = 0; e < r3.epochs.size(); e += 10) {
        const auto& rec = r3.epochs[e];
        std::printf("  epoch %2zu  loss %.4f  ACC %.3f\n", rec.epoch, rec.loss.total, rec.acc);
    }
    std::printf("discovered clusters (ACC):           %.3f\n", r3.final_acc());
    return 0;
}
