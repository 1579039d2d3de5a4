#pragma once

#include "gradfeat/dataset.hpp"
#include "gradfeat/models.hpp"
#include "gradfeat/netdef.hpp"
#include "gradfeat/optim.hpp"

namespace gradfeat {

struct PretrainResult {
    ParamSet params;  // tagged pretrained
    LinearHead head;  // pretext head, not part of the backbone
    TrainCurve curve;
};

/// Four copies of every image rotated by 0/90/180/270 degrees, labelled 0..3.
Dataset rotation_dataset(const Dataset& data);

/// Trains every layer of `def` (standard parametrization) plus a dense head on `data`.
PretrainResult train_backbone(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg);

/// Rotation pretext task; the returned head is the 4-way rotation classifier.
PretrainResult pretrain_rotation(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg);

/// Accuracy of the rotation head on the rotated copies of `data`.
double rotation_accuracy(const NetworkDef& def, const ParamSet& params, const LinearHead& head, const Dataset& data);

} // namespace gradfeat
