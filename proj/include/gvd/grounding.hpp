#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gvd/io.hpp"
#include "gvd/tensor.hpp"

namespace gvd {

struct BoundingBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // normalized [0,1]
};

struct Keypoint {
    double x = 0, y = 0;
    bool visible = true;
};

// One object's condition slot for one frame.
struct ConditionSlot {
    enum class Kind { missing, box, keypoint } kind = Kind::missing;
    BoundingBox box{};
    Keypoint point{};
    bool present() const { return kind != Kind::missing && !(kind == Kind::keypoint && !point.visible); }
};

struct TrackObject {
    std::string phrase;
    std::vector<ConditionSlot> frames;  // exactly num_frames slots
};

// Per-frame, per-object grounding conditions plus optional dense maps.
struct GroundingTrack {
    int num_frames = 0;
    std::vector<TrackObject> objects;
    std::vector<std::string> dense_paths;  // per frame, "" = none
    std::vector<Grid> dense;               // loaded maps, empty until load_dense

    GroundingTrack slice(int start, int end) const;  // frames [start, end)
};

// 2-D nonnegative spatial prior.
struct GroundingMap {
    enum class Norm { raw, peak };
    int width = 0, height = 0;
    std::vector<double> values;  // row-major
    Norm norm = Norm::raw;

    double max_value() const;
};

struct GaussianParams {
    double mu_x = 0, mu_y = 0;
    double sigma_x = 0, sigma_y = 0;
};

inline constexpr double kDefaultKeypointSigma = 0.05;

// Box center with sigma = extent/4; keypoint center with the default sigma.
// Throws "degenerate-box" for zero-area boxes.
GaussianParams gaussian_params_from_condition(const ConditionSlot& cond,
                                              double keypoint_sigma = kDefaultKeypointSigma);

// Closed-form 2-D Gaussian density sampled at cell centers, raw normalization.
GroundingMap render_gaussian(const GaussianParams& p, int width, int height);

// Per-object Gaussians, each peak-normalized, averaged over present objects;
// zero present objects give the all-zero map.
GroundingMap build_uncertainty_map(const GroundingTrack& track, int frame, int width, int height,
                                   double keypoint_sigma = kDefaultKeypointSigma);

// Dense-condition path: average channels, Gaussian blur, peak-normalize.
GroundingMap densify(const Grid& dense, double sigma, int radius);

// Combined per-frame grounding prior: sparse objects and/or the dense map,
// averaged when both are present.
GroundingMap frame_grounding_map(const GroundingTrack& track, int frame, int width, int height,
                                 double keypoint_sigma, double dense_sigma, int dense_radius);

// Area-average the map to the layer resolution, flatten row-major, scale by
// lambda. The result is added to every query row of the self-attention
// logits (key-broadcast). Throws "bias-shape".
Tensor map_to_attention_bias(const GroundingMap& map, int target_width, int target_height,
                             double lambda = 1.0);

// Exact fractional-overlap box-filter resize, also used for 2x2 downsampling.
void area_resize(const double* in, int in_w, int in_h, double* out, int out_w, int out_h);

// Track file format: JSON {num_frames, objects:[{phrase, boxes:[[x0,y0,x1,y1]|null,...],
// keypoints:[[x,y]|[x,y,visible]|null,...]}], dense:[path|null,...]}.
// Errors: "track-parse", "track-range", "track-frames".
GroundingTrack parse_condition_file(const std::string& text);
std::string serialize_track(const GroundingTrack& track);
GroundingTrack load_track_file(const std::string& path);

// Resolve and read per-frame dense maps relative to the track's directory.
void load_dense_maps(GroundingTrack& track, const std::string& base_dir);

bool track_equal(const GroundingTrack& a, const GroundingTrack& b);

}  // namespace gvd
