#pragma once

// File formats: JSON-lines datasets, JSON configuration sections, binary
// checkpoints and CSV pseudo-label caches.

#include "mast/selftrain.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>

namespace mast {

using Json = nlohmann::json;

// Configuration sections. Missing keys keep their defaults; unknown keys raise ConfigError.
Json to_json(const AnchorSpec& a);
Json to_json(const NetworkConfig& n);  // sizes only; branches are derived from anchors
Json to_json(const ObjectiveConfig& o);
Json to_json(const SelfTrainConfig& s);
Json to_json(const CameraIntrinsics& c);
Json to_json(const DomainConfig& d);
Json to_json(const PoseRange& r);
Json to_json(const ScoreAssignmentConfig& s);
void from_json(const Json& j, AnchorSpec& a);
void from_json(const Json& j, NetworkConfig& n);
void from_json(const Json& j, ObjectiveConfig& o);
void from_json(const Json& j, SelfTrainConfig& s);
void from_json(const Json& j, CameraIntrinsics& c);
void from_json(const Json& j, DomainConfig& d);
void from_json(const Json& j, PoseRange& r);
void from_json(const Json& j, ScoreAssignmentConfig& s);

// Rejects keys outside `allowed`; `section` names the object in the message.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& section);

Json to_json(const ObjectModel& m);  // symmetries as row-major 9-tuples
ObjectModel object_model_from_json(const Json& j);

// One file per domain: a header line (format, version, seeds, camera, objects)
// followed by one record per sample.
void save_dataset(const Dataset& ds, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path);
Dataset load_dataset(const std::filesystem::path& source_path, const std::filesystem::path& target_path);

void save_scalar_dataset(const ScalarDataset& ds, const std::filesystem::path& path);
ScalarDataset load_scalar_dataset(const std::filesystem::path& path);

// Binary checkpoint: magic, version, JSON header, raw parameter and Adam
// moment values, checksum. Corrupt or truncated files raise IoError.
void save_checkpoint(const PoseEstimator& est, const std::filesystem::path& path, const Json& meta = Json::object());
PoseEstimator load_checkpoint(const std::filesystem::path& path, Json* meta = nullptr);
void save_scalar_checkpoint(const ScalarEstimator& est, int n_bins, bool direct, const std::filesystem::path& path,
                            const Json& meta = Json::object());
ScalarEstimator load_scalar_checkpoint(const std::filesystem::path& path, Json* meta = nullptr);

// Raises IncompatibleCheckpoint when the stored layout differs from the configured one.
void check_compatible(const PoseEstimator& est, const AnchorSpec& anchors, const NetworkConfig& net);

// CSV: sample_id, object_id, round, confidence, rotation (row-major), translation.
void write_pseudo_labels(const std::filesystem::path& path, std::span<const PseudoLabel> labels, int round);

}  // namespace mast
