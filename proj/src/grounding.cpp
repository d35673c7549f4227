#include "gvd/grounding.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "gvd/ops.hpp"

namespace gvd {

using ordered_json = nlohmann::ordered_json;

GroundingTrack GroundingTrack::slice(int start, int end) const {
    if (start < 0 || end > num_frames || start >= end)
        fail("track-frames", "invalid slice range");
    GroundingTrack out;
    out.num_frames = end - start;
    out.objects.reserve(objects.size());
    for (const TrackObject& obj : objects) {
        TrackObject o;
        o.phrase = obj.phrase;
        o.frames.assign(obj.frames.begin() + start, obj.frames.begin() + end);
        out.objects.push_back(std::move(o));
    }
    if (!dense_paths.empty())
        out.dense_paths.assign(dense_paths.begin() + start, dense_paths.begin() + end);
    if (!dense.empty()) out.dense.assign(dense.begin() + start, dense.begin() + end);
    return out;
}

double GroundingMap::max_value() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, v);
    return m;
}

GaussianParams gaussian_params_from_condition(const ConditionSlot& cond, double keypoint_sigma) {
    GaussianParams p;
    if (cond.kind == ConditionSlot::Kind::box) {
        const BoundingBox& b = cond.box;
        if (b.x_max <= b.x_min || b.y_max <= b.y_min)
            fail("degenerate-box", "box has zero area");
        p.mu_x = 0.5 * (b.x_min + b.x_max);
        p.mu_y = 0.5 * (b.y_min + b.y_max);
        p.sigma_x = 0.25 * (b.x_max - b.x_min);
        p.sigma_y = 0.25 * (b.y_max - b.y_min);
    } else if (cond.kind == ConditionSlot::Kind::keypoint) {
        p.mu_x = cond.point.x;
        p.mu_y = cond.point.y;
        p.sigma_x = p.sigma_y = keypoint_sigma;
    } else {
        fail("degenerate-box", "missing condition has no Gaussian");
    }
    return p;
}

GroundingMap render_gaussian(const GaussianParams& p, int width, int height) {
    GroundingMap map;
    map.width = width;
    map.height = height;
    map.norm = GroundingMap::Norm::raw;
    map.values.resize(static_cast<size_t>(width) * height);
    const double amp = 1.0 / (2.0 * M_PI * p.sigma_x * p.sigma_y);
    for (int iy = 0; iy < height; ++iy) {
        const double y = (iy + 0.5) / height;
        const double dy = (y - p.mu_y) / p.sigma_y;
        for (int ix = 0; ix < width; ++ix) {
            const double x = (ix + 0.5) / width;
            const double dx = (x - p.mu_x) / p.sigma_x;
            map.values[static_cast<size_t>(iy) * width + ix] = amp * std::exp(-0.5 * (dx * dx + dy * dy));
        }
    }
    return map;
}

static void peak_normalize(GroundingMap& map) {
    const double m = map.max_value();
    if (m > 0.0)
        for (double& v : map.values) v /= m;
    map.norm = GroundingMap::Norm::peak;
}

GroundingMap build_uncertainty_map(const GroundingTrack& track, int frame, int width, int height,
                                   double keypoint_sigma) {
    if (frame < 0 || frame >= track.num_frames) fail("track-frames", "frame index out of range");
    GroundingMap acc;
    acc.width = width;
    acc.height = height;
    acc.values.assign(static_cast<size_t>(width) * height, 0.0);
    acc.norm = GroundingMap::Norm::peak;
    int present = 0;
    for (const TrackObject& obj : track.objects) {
        const ConditionSlot& slot = obj.frames[static_cast<size_t>(frame)];
        if (!slot.present()) continue;
        GroundingMap mk = render_gaussian(gaussian_params_from_condition(slot, keypoint_sigma),
                                          width, height);
        peak_normalize(mk);
        for (size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += mk.values[i];
        ++present;
    }
    if (present > 0)
        for (double& v : acc.values) v /= present;
    return acc;
}

GroundingMap densify(const Grid& dense, double sigma, int radius) {
    GroundingMap map;
    map.width = dense.width;
    map.height = dense.height;
    map.values.assign(static_cast<size_t>(dense.width) * dense.height, 0.0);
    for (int y = 0; y < dense.height; ++y)
        for (int x = 0; x < dense.width; ++x) {
            double sum = 0.0;
            for (int c = 0; c < dense.channels; ++c)
                sum += dense.values[static_cast<size_t>((y * dense.width + x) * dense.channels + c)];
            map.values[static_cast<size_t>(y) * dense.width + x] = sum / dense.channels;
        }
    std::vector<double> blurred(map.values.size());
    gaussian_blur_grid(map.values.data(), blurred.data(), map.width, map.height, sigma, radius);
    map.values = std::move(blurred);
    peak_normalize(map);
    return map;
}

GroundingMap frame_grounding_map(const GroundingTrack& track, int frame, int width, int height,
                                 double keypoint_sigma, double dense_sigma, int dense_radius) {
    GroundingMap sparse = build_uncertainty_map(track, frame, width, height, keypoint_sigma);
    const bool any_sparse = sparse.max_value() > 0.0;
    const bool has_dense = static_cast<size_t>(frame) < track.dense.size() &&
                           track.dense[static_cast<size_t>(frame)].width > 0;
    if (!has_dense) return sparse;

    GroundingMap dm = densify(track.dense[static_cast<size_t>(frame)], dense_sigma, dense_radius);
    if (dm.width != width || dm.height != height) {
        GroundingMap resized;
        resized.width = width;
        resized.height = height;
        resized.norm = GroundingMap::Norm::peak;
        resized.values.resize(static_cast<size_t>(width) * height);
        area_resize(dm.values.data(), dm.width, dm.height, resized.values.data(), width, height);
        dm = std::move(resized);
    }
    if (!any_sparse) return dm;
    for (size_t i = 0; i < sparse.values.size(); ++i)
        sparse.values[i] = 0.5 * (sparse.values[i] + dm.values[i]);
    return sparse;
}

void area_resize(const double* in, int in_w, int in_h, double* out, int out_w, int out_h) {
    const double sx = static_cast<double>(in_w) / out_w;
    const double sy = static_cast<double>(in_h) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (int ox = 0; ox < out_w; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc = 0.0;
            for (int iy = static_cast<int>(y0); iy < in_h && iy < y1; ++iy) {
                const double hy = std::min<double>(y1, iy + 1) - std::max<double>(y0, iy);
                if (hy <= 0) continue;
                for (int ix = static_cast<int>(x0); ix < in_w && ix < x1; ++ix) {
                    const double wx = std::min<double>(x1, ix + 1) - std::max<double>(x0, ix);
                    if (wx <= 0) continue;
                    acc += hy * wx * in[static_cast<size_t>(iy) * in_w + ix];
                }
            }
            out[static_cast<size_t>(oy) * out_w + ox] = acc / (sx * sy);
        }
    }
}

Tensor map_to_attention_bias(const GroundingMap& map, int target_width, int target_height,
                             double lambda) {
    if (target_width < 1 || target_height < 1) fail("bias-shape", "target dims must be >= 1");
    Tensor bias({static_cast<int64_t>(target_width) * target_height});
    area_resize(map.values.data(), map.width, map.height, bias.ptr(), target_width, target_height);
    for (double& v : bias.data) v *= lambda;
    return bias;
}

namespace {

double checked_coord(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0))
        fail("track-range", std::string(what) + " outside [0,1]");
    return v;
}

ConditionSlot parse_box_entry(const ordered_json& e) {
    if (!e.is_array() || e.size() != 4) fail("track-parse", "box must be [x0,y0,x1,y1]");
    for (const auto& v : e)
        if (!v.is_number()) fail("track-parse", "box coordinates must be numbers");
    ConditionSlot slot;
    slot.kind = ConditionSlot::Kind::box;
    slot.box.x_min = checked_coord(e[0].get<double>(), "box x_min");
    slot.box.y_min = checked_coord(e[1].get<double>(), "box y_min");
    slot.box.x_max = checked_coord(e[2].get<double>(), "box x_max");
    slot.box.y_max = checked_coord(e[3].get<double>(), "box y_max");
    if (slot.box.x_min >= slot.box.x_max || slot.box.y_min >= slot.box.y_max)
        fail("track-range", "box min must be strictly below max");
    return slot;
}

ConditionSlot parse_keypoint_entry(const ordered_json& e) {
    if (!e.is_array() || (e.size() != 2 && e.size() != 3))
        fail("track-parse", "keypoint must be [x,y] or [x,y,visible]");
    ConditionSlot slot;
    slot.kind = ConditionSlot::Kind::keypoint;
    slot.point.x = checked_coord(e[0].get<double>(), "keypoint x");
    slot.point.y = checked_coord(e[1].get<double>(), "keypoint y");
    slot.point.visible = e.size() < 3 || e[2].get<double>() != 0.0;
    return slot;
}

}  // namespace

GroundingTrack parse_condition_file(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        fail("track-parse", e.what());
    }
    if (!j.is_object() || !j.contains("num_frames") || !j.contains("objects"))
        fail("track-parse", "track needs num_frames and objects");
    GroundingTrack track;
    if (!j["num_frames"].is_number_integer()) fail("track-parse", "num_frames must be an integer");
    track.num_frames = j["num_frames"].get<int>();
    if (track.num_frames < 1) fail("track-frames", "num_frames must be >= 1");

    if (!j["objects"].is_array()) fail("track-parse", "objects must be an array");
    for (const auto& jo : j["objects"]) {
        if (!jo.is_object() || !jo.contains("phrase") || !jo["phrase"].is_string())
            fail("track-parse", "object needs a phrase");
        TrackObject obj;
        obj.phrase = jo["phrase"].get<std::string>();
        obj.frames.assign(static_cast<size_t>(track.num_frames), ConditionSlot{});

        const bool has_boxes = jo.contains("boxes");
        const bool has_points = jo.contains("keypoints");
        if (has_boxes) {
            if (!jo["boxes"].is_array()) fail("track-parse", "boxes must be an array");
            if (static_cast<int>(jo["boxes"].size()) != track.num_frames)
                fail("track-frames", "object '" + obj.phrase + "' has " +
                                         std::to_string(jo["boxes"].size()) + " box entries in a " +
                                         std::to_string(track.num_frames) + "-frame track");
            for (int f = 0; f < track.num_frames; ++f) {
                const auto& e = jo["boxes"][static_cast<size_t>(f)];
                if (e.is_null()) continue;
                obj.frames[static_cast<size_t>(f)] = parse_box_entry(e);
            }
        }
        if (has_points) {
            if (!jo["keypoints"].is_array()) fail("track-parse", "keypoints must be an array");
            if (static_cast<int>(jo["keypoints"].size()) != track.num_frames)
                fail("track-frames", "keypoint count mismatch for '" + obj.phrase + "'");
            for (int f = 0; f < track.num_frames; ++f) {
                const auto& e = jo["keypoints"][static_cast<size_t>(f)];
                if (e.is_null()) continue;
                if (obj.frames[static_cast<size_t>(f)].kind != ConditionSlot::Kind::missing)
                    fail("track-parse", "frame " + std::to_string(f) + " of '" + obj.phrase +
                                            "' has both a box and a keypoint");
                obj.frames[static_cast<size_t>(f)] = parse_keypoint_entry(e);
            }
        }
        track.objects.push_back(std::move(obj));
    }

    if (j.contains("dense")) {
        if (!j["dense"].is_array()) fail("track-parse", "dense must be an array");
        if (static_cast<int>(j["dense"].size()) != track.num_frames)
            fail("track-frames", "dense entry count mismatch");
        for (const auto& e : j["dense"]) {
            if (e.is_null()) track.dense_paths.emplace_back();
            else if (e.is_string()) track.dense_paths.push_back(e.get<std::string>());
            else fail("track-parse", "dense entries must be paths or null");
        }
    }
    return track;
}

std::string serialize_track(const GroundingTrack& track) {
    ordered_json j;
    j["num_frames"] = track.num_frames;
    j["objects"] = ordered_json::array();
    for (const TrackObject& obj : track.objects) {
        ordered_json jo;
        jo["phrase"] = obj.phrase;
        bool any_box = false, any_point = false;
        for (const ConditionSlot& s : obj.frames) {
            any_box |= s.kind == ConditionSlot::Kind::box;
            any_point |= s.kind == ConditionSlot::Kind::keypoint;
        }
        if (any_box || !any_point) {
            ordered_json boxes = ordered_json::array();
            for (const ConditionSlot& s : obj.frames) {
                if (s.kind == ConditionSlot::Kind::box)
                    boxes.push_back({s.box.x_min, s.box.y_min, s.box.x_max, s.box.y_max});
                else
                    boxes.push_back(nullptr);
            }
            jo["boxes"] = std::move(boxes);
        }
        if (any_point) {
            ordered_json points = ordered_json::array();
            for (const ConditionSlot& s : obj.frames) {
                if (s.kind == ConditionSlot::Kind::keypoint)
                    points.push_back({s.point.x, s.point.y, s.point.visible ? 1.0 : 0.0});
                else
                    points.push_back(nullptr);
            }
            jo["keypoints"] = std::move(points);
        }
        j["objects"].push_back(std::move(jo));
    }
    if (!track.dense_paths.empty()) {
        ordered_json dense = ordered_json::array();
        for (const std::string& p : track.dense_paths) {
            if (p.empty()) dense.push_back(nullptr);
            else dense.push_back(p);
        }
        j["dense"] = std::move(dense);
    }
    return j.dump(2) + "\n";
}

GroundingTrack load_track_file(const std::string& path) {
    GroundingTrack track = parse_condition_file(read_text_file(path));
    const size_t slash = path.find_last_of('/');
    load_dense_maps(track, slash == std::string::npos ? "." : path.substr(0, slash));
    return track;
}

void load_dense_maps(GroundingTrack& track, const std::string& base_dir) {
    if (track.dense_paths.empty()) return;
    track.dense.assign(static_cast<size_t>(track.num_frames), Grid{});
    for (int f = 0; f < track.num_frames; ++f) {
        const std::string& p = track.dense_paths[static_cast<size_t>(f)];
        if (p.empty()) continue;
        const std::string full = p.front() == '/' ? p : base_dir + "/" + p;
        track.dense[static_cast<size_t>(f)] = read_gvdm(full);
        for (double v : track.dense[static_cast<size_t>(f)].values)
            if (!(v >= 0.0) || !std::isfinite(v))
                fail("track-range", "dense map '" + p + "' has negative or non-finite values");
    }
}

bool track_equal(const GroundingTrack& a, const GroundingTrack& b) {
    if (a.num_frames != b.num_frames || a.objects.size() != b.objects.size() ||
        a.dense_paths != b.dense_paths)
        return false;
    for (size_t i = 0; i < a.objects.size(); ++i) {
        const TrackObject& oa = a.objects[i];
        const TrackObject& ob = b.objects[i];
        if (oa.phrase != ob.phrase || oa.frames.size() != ob.frames.size()) return false;
        for (size_t f = 0; f < oa.frames.size(); ++f) {
            const ConditionSlot& sa = oa.frames[f];
            const ConditionSlot& sb = ob.frames[f];
            if (sa.kind != sb.kind) return false;
            if (sa.kind == ConditionSlot::Kind::box &&
                (sa.box.x_min != sb.box.x_min || sa.box.y_min != sb.box.y_min ||
                 sa.box.x_max != sb.box.x_max || sa.box.y_max != sb.box.y_max))
                return false;
            if (sa.kind == ConditionSlot::Kind::keypoint &&
                (sa.point.x != sb.point.x || sa.point.y != sb.point.y ||
                 sa.point.visible != sb.point.visible))
                return false;
        }
    }
    return true;
}

}  // namespace gvd
