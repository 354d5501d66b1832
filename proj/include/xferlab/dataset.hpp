#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "xferlab/error.hpp"
#include "xferlab/image.hpp"
#include "xferlab/model.hpp"
#include "xferlab/tensor.hpp"

namespace xferlab {

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;

    bool empty() const noexcept { return mean.empty(); }
    bool operator==(const ChannelStats&) const = default;
};

struct LabeledSample {
    Tensor image;  // C x H x W, values in [0, 1]
    std::size_t label = 0;
    std::string id;
};

struct LabeledDataset {
    std::vector<LabeledSample> samples;
    std::vector<std::string> class_names;
    ChannelStats channel_stats;  // empty until standardize() records the stats it applied

    std::size_t size() const noexcept { return samples.size(); }
    std::size_t num_classes() const noexcept { return class_names.size(); }

    InputShape input_shape() const {
        if (samples.empty()) throw DataError("dataset is empty");
        const auto& s = samples.front().image.shape();
        return {s.at(0), s.at(1), s.at(2)};
    }

    std::vector<std::size_t> labels() const {
        std::vector<std::size_t> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.label);
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(class_names.size(), 0);
        for (const auto& s : samples) ++counts.at(s.label);
        return counts;
    }

    /// Checks labels, id uniqueness, uniform shapes and non-empty classes.
    void validate() const {
        if (class_names.empty()) throw DataError("dataset has no classes");
        std::unordered_set<std::string> ids;
        std::vector<std::size_t> counts(class_names.size(), 0);
        const Shape* shape = nullptr;
        for (const auto& s : samples) {
            if (s.label >= class_names.size())
                throw DataError("sample " + s.id + " has label " + std::to_string(s.label) + " outside " +
                                std::to_string(class_names.size()) + " classes");
            if (!ids.insert(s.id).second) throw DataError("duplicate sample id " + s.id);
            if (s.image.ndim() != 3) throw DataError("sample " + s.id + " is not C x H x W");
            if (shape && *shape != s.image.shape())
                throw DataError("sample " + s.id + " has shape " + shape_str(s.image.shape()) + ", expected " +
                                shape_str(*shape));
            shape = &s.image.shape();
            ++counts[s.label];
        }
        for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] == 0) throw DataError("class " + class_names[c] + " has no samples");
    }
};

/// Per-channel mean and population standard deviation over the listed samples.
inline ChannelStats compute_stats(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("cannot compute channel statistics of an empty split");
    const InputShape in = ds.input_shape();
    const std::size_t plane = in.height * in.width;
    ChannelStats st{std::vector<double>(in.channels, 0.0), std::vector<double>(in.channels, 0.0)};
    const double n = static_cast<double>(indices.size() * plane);
    for (std::size_t c = 0; c < in.channels; ++c) {
        double sum = 0.0;
        for (auto i : indices) {
            const auto d = ds.samples.at(i).image.data().subspan(c * plane, plane);
            sum = std::accumulate(d.begin(), d.end(), sum);
        }
        double mean = sum / n;
        double ss = 0.0;
        double lo = ds.samples[indices[0]].image[c * plane], hi = lo;
        for (auto i : indices)
            for (double v : ds.samples[i].image.data().subspan(c * plane, plane)) {
                ss += (v - mean) * (v - mean);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        if (lo == hi) {  // constant channel: exact mean, zero spread
            mean = lo;
            ss = 0.0;
        }
        st.mean[c] = mean;
        st.std[c] = std::sqrt(ss / n);
    }
    return st;
}

inline ChannelStats compute_stats(const LabeledDataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return compute_stats(ds, all);
}

/// Replaces zero (or non-finite) standard deviations by 1. Each substitution
/// appends a message to `warnings` when given.
inline ChannelStats sanitize_stats(ChannelStats st, std::vector<std::string>* warnings = nullptr) {
    if (st.mean.size() != st.std.size()) throw DataError("channel statistics have mismatched lengths");
    for (std::size_t c = 0; c < st.std.size(); ++c) {
        if (!std::isfinite(st.mean[c])) throw DataError("channel " + std::to_string(c) + " mean is not finite");
        if (!(st.std[c] > 0.0) || !std::isfinite(st.std[c])) {
            if (warnings) warnings->push_back("channel " + std::to_string(c) + " has zero std; using 1");
            st.std[c] = 1.0;
        }
    }
    return st;
}

/// (x - mean) / std in place on one C x H x W image.
inline void standardize_image(std::span<double> image, const ChannelStats& st) {
    const std::size_t c = st.mean.size();
    const std::size_t plane = image.size() / c;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double m = st.mean[ch], inv = 1.0 / st.std[ch];
        for (auto& v : image.subspan(ch * plane, plane)) v = (v - m) * inv;
    }
}

/// Copy of `ds` with every image standardized by `stats`. The stats that were
/// actually applied (after the zero-std fallback) are recorded on the result.
inline LabeledDataset standardize(const LabeledDataset& ds, const ChannelStats& stats,
                                  std::vector<std::string>* warnings = nullptr) {
    const ChannelStats st = sanitize_stats(stats, warnings);
    if (!ds.samples.empty() && st.mean.size() != ds.input_shape().channels)
        throw DimensionError("channel statistics cover " + std::to_string(st.mean.size()) + " channels, images have " +
                             std::to_string(ds.input_shape().channels));
    LabeledDataset out{{}, ds.class_names, st};
    out.samples.reserve(ds.size());
    for (const auto& s : ds.samples) {
        LabeledSample c{s.image.clone(), s.label, s.id};
        standardize_image(c.image.data(), st);
        out.samples.push_back(std::move(c));
    }
    return out;
}

/// Loads `root/<class>/<stem>.pgm`. Classes are the sorted subdirectory
/// names; samples are ordered by (class, filename) and get id "class/stem".
/// Every image is resized to `shape` (bilinear) and its gray plane is
/// replicated across `shape.channels`.
inline LabeledDataset load_directory(const std::filesystem::path& root, const InputShape& shape) {
    namespace fs = std::filesystem;
    if (shape.channels == 0 || shape.height == 0 || shape.width == 0) throw ConfigError("image shape must be positive");
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw DataError("dataset root " + root.string() + " is not a directory");
    LabeledDataset ds;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) class_dirs.push_back(e.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError("dataset root " + root.string() + " has no class directories");
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        const auto& dir = class_dirs[label];
        const std::string cls = dir.filename().string();
        ds.class_names.push_back(cls);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("class directory " + dir.string() + " contains no .pgm images");
        for (const auto& f : files) {
            const Tensor gray = resize_bilinear(to_tensor(read_pgm(f)), shape.height, shape.width);
            Tensor img(Shape{shape.channels, shape.height, shape.width});
            const std::size_t plane = shape.height * shape.width;
            for (std::size_t c = 0; c < shape.channels; ++c)
                std::copy(gray.data().begin(), gray.data().end(), img.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
            ds.samples.push_back({img, label, cls + "/" + f.stem().string()});
        }
    }
    return ds;
}

/// Writes the first channel of every sample as `root/<class>/<stem>.pgm`,
/// where stem is the id part after the last '/'.
inline void write_directory(const LabeledDataset& ds, const std::filesystem::path& root) {
    for (const auto& s : ds.samples) {
        const auto slash = s.id.rfind('/');
        const std::string stem = slash == std::string::npos ? s.id : s.id.substr(slash + 1);
        write_file_atomic(root / ds.class_names.at(s.label) / (stem + ".pgm"), encode_pgm(to_gray(s.image)));
    }
}

/// Source and target corpora over one shared input space.
struct TransferSetting {
    LabeledDataset source;
    LabeledDataset target;

    InputShape input_shape() const { return source.input_shape(); }

    void validate() const {
        source.validate();
        target.validate();
        const auto a = source.input_shape(), b = target.input_shape();
        if (a.channels != b.channels || a.height != b.height || a.width != b.width)
            throw DimensionError("source images are " + std::to_string(a.channels) + "x" + std::to_string(a.height) + "x" +
                                 std::to_string(a.width) + " but target images are " + std::to_string(b.channels) + "x" +
                                 std::to_string(b.height) + "x" + std::to_string(b.width));
    }
};

}  // namespace xferlab
