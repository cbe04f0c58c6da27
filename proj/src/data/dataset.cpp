#include "ditmos/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ditmos/nn/serialize.hpp"

namespace ditmos::data {

namespace {

constexpr std::array<char, 4> kDatasetMagic{'D', 'T', 'M', 'D'};

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void Dataset::validate() const
{
    if (channels == 0 || length == 0) throw std::invalid_argument("dataset sample shape must be positive");
    if (samples.size() != labels.size()) throw std::invalid_argument("dataset has mismatched samples and labels");
    if (!subset_ids.empty() && subset_ids.size() != samples.size()) {
        throw std::invalid_argument("dataset subset ids do not cover every sample");
    }
    const nn::Shape shape = sample_shape();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].shape() != shape) {
            throw std::invalid_argument("sample " + std::to_string(i) + " has shape " +
                                        nn::shape_string(samples[i].shape()) + ", expected " + nn::shape_string(shape));
        }
        if (labels[i] >= num_classes) {
            throw std::invalid_argument("sample " + std::to_string(i) + " label " + std::to_string(labels[i]) +
                                        " >= num_classes " + std::to_string(num_classes));
        }
    }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const
{
    Dataset out{channels, length, num_classes, {}, {}, {}};
    out.samples.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        out.samples.push_back(samples.at(i));
        out.labels.push_back(labels.at(i));
        if (!subset_ids.empty()) out.subset_ids.push_back(subset_ids[i]);
    }
    return out;
}

std::vector<std::size_t> Dataset::members_of(int id) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subset_ids.size(); ++i) {
        if (subset_ids[i] == id) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const
{
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) ++counts.at(y);
    return counts;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t channels, std::size_t length,
                 std::size_t num_classes)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Dataset ds{channels, length, num_classes, {}, {}, {}};
    const std::size_t arity = 1 + channels * length;
    std::string line;
    std::size_t line_no = 0;
    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));
        if (fields.size() != arity) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(arity) + " fields, got " + std::to_string(fields.size()));
        }
        auto bad = [&](const std::string& what) {
            return std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
        };
        std::size_t label = 0;
        const auto& lf = fields[0];
        if (auto [p, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
            ec != std::errc{} || p != lf.data() + lf.size()) {
            throw bad("invalid label '" + lf + "'");
        }
        std::vector<nn::Scalar> values(channels * length);
        for (std::size_t i = 0; i < values.size(); ++i) {
            try {
                std::size_t used = 0;
                values[i] = static_cast<nn::Scalar>(std::stod(fields[i + 1], &used));
                if (used != fields[i + 1].size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw bad("invalid value '" + fields[i + 1] + "' in field " + std::to_string(i + 2));
            }
        }
        max_label = std::max(max_label, label);
        ds.samples.emplace_back(nn::Shape{channels, length}, std::move(values));
        ds.labels.push_back(label);
    }
    if (ds.num_classes == 0) ds.num_classes = ds.samples.empty() ? 0 : max_label + 1;
    if (!ds.samples.empty()) ds.validate();
    return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& dataset)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.labels[i];
        for (nn::Scalar v : dataset.samples[i].data()) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset)
{
    dataset.validate();
    nn::ByteWriter w;
    w.magic(kDatasetMagic);
    w.u32(nn::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(dataset.size()));
    w.u32(static_cast<std::uint32_t>(dataset.channels));
    w.u32(static_cast<std::uint32_t>(dataset.length));
    w.u32(static_cast<std::uint32_t>(dataset.num_classes));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        w.u32(static_cast<std::uint32_t>(dataset.labels[i]));
        w.i32(dataset.subset_ids.empty() ? -1 : dataset.subset_ids[i]);
        for (nn::Scalar v : dataset.samples[i].data()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes)
{
    nn::ByteReader r(bytes);
    r.expect_magic(kDatasetMagic, "DTMD dataset");
    const std::uint32_t version = r.u32();
    if (version != nn::kFormatVersion) throw std::runtime_error("unsupported dataset version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    Dataset ds;
    ds.channels = r.u32();
    ds.length = r.u32();
    ds.num_classes = r.u32();
    const std::size_t per = ds.channels * ds.length;
    if (per == 0 || count > r.remaining() / (8 + 4 * per)) throw std::runtime_error("dataset header exceeds file size");
    bool any_subset = false;
    std::vector<int> ids;
    for (std::uint32_t i = 0; i < count; ++i) {
        ds.labels.push_back(r.u32());
        ids.push_back(r.i32());
        any_subset = any_subset || ids.back() >= 0;
        std::vector<nn::Scalar> values(per);
        for (auto& v : values) v = static_cast<nn::Scalar>(r.f32());
        ds.samples.emplace_back(nn::Shape{ds.channels, ds.length}, std::move(values));
    }
    if (r.remaining() != 0) throw std::runtime_error("trailing bytes after dataset payload");
    if (any_subset) ds.subset_ids = std::move(ids);
    ds.validate();
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset)
{
    nn::write_file(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path)
{
    return deserialize_dataset(nn::read_file(path));
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.labels[i]).push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, test;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        if (idx.size() < 2) {
            throw std::invalid_argument("class " + std::to_string(c) + " has fewer than 2 samples; cannot split");
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
        take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
        train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
        test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
    }
    std::shuffle(train.begin(), train.end(), rng);
    std::shuffle(test.begin(), test.end(), rng);
    return {dataset.select(train), dataset.select(test)};
}

namespace {

// Per-channel waveform of one (class, cluster) template.
struct Component {
    double amplitude, cycles, phase, centre, width;
};

struct Template {
    std::vector<std::vector<Component>> channels;
};

Template draw_template(std::mt19937_64& rng, std::size_t channels)
{
    std::uniform_real_distribution<double> amp(0.6, 1.4);
    std::uniform_real_distribution<double> cycles(1.5, 14.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> centre(0.15, 0.85);
    std::uniform_real_distribution<double> width(0.12, 0.45);
    Template t;
    t.channels.resize(channels);
    for (auto& ch : t.channels) {
        for (int j = 0; j < 2; ++j) ch.push_back({amp(rng), cycles(rng), phase(rng), centre(rng), width(rng)});
    }
    return t;
}

double evaluate(const std::vector<Component>& comps, double u)
{
    double v = 0.0;
    for (const auto& c : comps) {
        const double d = (u - c.centre) / c.width;
        v += c.amplitude * std::exp(-0.5 * d * d) * std::sin(2.0 * std::numbers::pi * c.cycles * u + c.phase);
    }
    return v;
}

}  // namespace

Dataset gen_synthetic(const SyntheticConfig& config)
{
    if (config.num_classes == 0 || config.clusters_per_class == 0 || config.channels == 0 || config.length == 0 ||
        config.n == 0 || config.noise_sigma < 0.0 || config.shift_per_sigma < 0.0 ||
        config.family_amplitude < 0.0) {
        throw std::invalid_argument("synthetic dataset parameters must be positive");
    }
    std::mt19937_64 rng(config.seed);
    const std::size_t templates = config.num_classes * config.clusters_per_class;
    std::vector<std::vector<nn::Scalar>> waves;
    std::vector<Template> families;
    for (std::size_t f = 0; f < config.families; ++f) {
        Template t = draw_template(rng, config.channels);
        for (auto& ch : t.channels) {
            ch.resize(1);
            ch[0].amplitude *= config.family_amplitude;
            ch[0].cycles = 0.5 + ch[0].cycles / 5.0;
            ch[0].width *= 2.5;
        }
        families.push_back(std::move(t));
    }
    for (std::size_t k = 0; k < templates; ++k) {
        Template t = draw_template(rng, config.channels);
        if (!families.empty()) {
            const Template& shared = families[k % families.size()];
            for (std::size_t c = 0; c < config.channels; ++c) t.channels[c].push_back(shared.channels[c][0]);
        }
        std::vector<nn::Scalar> wave(config.channels * config.length);
        for (std::size_t c = 0; c < config.channels; ++c) {
            for (std::size_t s = 0; s < config.length; ++s) {
                const double u = static_cast<double>(s) / static_cast<double>(config.length);
                wave[c * config.length + s] = static_cast<nn::Scalar>(evaluate(t.channels[c], u));
            }
        }
        waves.push_back(std::move(wave));
    }
    Dataset ds{config.channels, config.length, config.num_classes, {}, {}, {}};
    std::uniform_int_distribution<std::size_t> pick_cluster(0, config.clusters_per_class - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < config.n; ++i) {
        const std::size_t label = i % config.num_classes;
        const std::size_t cluster = pick_cluster(rng);
        const auto& wave = waves[label * config.clusters_per_class + cluster];
        std::vector<nn::Scalar> values(wave.size());
        const long shift = std::lround(config.noise_sigma * config.shift_per_sigma * noise(rng));
        const long len = static_cast<long>(config.length);
        for (std::size_t c = 0; c < config.channels; ++c) {
            for (long t = 0; t < len; ++t) {
                const long src = ((t - shift) % len + len) % len;
                values[c * config.length + static_cast<std::size_t>(t)] =
                    static_cast<nn::Scalar>(wave[c * config.length + static_cast<std::size_t>(src)]);
            }
        }
        if (config.noise_sigma > 0.0) {
            for (auto& v : values) v += static_cast<nn::Scalar>(config.noise_sigma * noise(rng));
        }
        ds.samples.emplace_back(ds.sample_shape(), std::move(values));
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace ditmos::data
