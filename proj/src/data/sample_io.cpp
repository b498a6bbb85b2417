#include "s4mi/data/sample_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace s4mi::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

void skip_pnm_ws(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

int read_pnm_int(std::istream& in) {
    skip_pnm_ws(in);
    int v = 0;
    in >> v;
    return v;
}

}  // namespace

void write_ppm(const fs::path& path, const Image& image) {
    if (image.c != 3 && image.c != 1)
        throw std::invalid_argument("write_ppm: needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
    out << (image.c == 3 ? "P6\n" : "P5\n") << image.w << " " << image.h << "\n255\n";
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            for (int ch = 0; ch < image.c; ++ch) out.put(static_cast<char>(to_byte(image.at(y, x, ch))));
}

Image read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
    std::string magic;
    in >> magic;
    int channels = 0;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        throw std::runtime_error("read_ppm: unsupported magic " + magic);
    int w = read_pnm_int(in), h = read_pnm_int(in), maxval = read_pnm_int(in);
    if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error("read_ppm: bad header");
    in.get();  // single whitespace after maxval
    Image img(h, w, channels);
    std::vector<char> row(static_cast<size_t>(w) * channels);
    for (int y = 0; y < h; ++y) {
        in.read(row.data(), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("read_ppm: truncated file");
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                img.at(y, x, ch) =
                    static_cast<uint8_t>(row[static_cast<size_t>(x) * channels + ch]) / 255.0;
    }
    return img;
}

void write_mask_pgm(const fs::path& path, const Mask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_mask_pgm: cannot open " + path.string());
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    for (int v : mask.v) out.put(static_cast<char>(std::clamp(v, 0, 255)));
}

Mask read_mask_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_mask_pgm: cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("read_mask_pgm: unsupported magic " + magic);
    int w = read_pnm_int(in), h = read_pnm_int(in), maxval = read_pnm_int(in);
    if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error("read_mask_pgm: bad header");
    in.get();
    Mask mask(h, w);
    std::vector<char> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        in.read(row.data(), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("read_mask_pgm: truncated file");
        for (int x = 0; x < w; ++x) mask.at(y, x) = static_cast<uint8_t>(row[static_cast<size_t>(x)]);
    }
    return mask;
}

std::vector<RawSample> load_raw_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("load_raw_dir: not a directory: " + dir.string());
    std::map<std::string, std::vector<int>> labels;
    fs::path labels_file = dir / "labels.csv";
    if (fs::exists(labels_file)) {
        std::ifstream in(labels_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string id, field;
            std::getline(ss, id, ',');
            std::vector<int> vals;
            while (std::getline(ss, field, ',')) vals.push_back(std::stoi(field));
            labels[id] = std::move(vals);
        }
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        auto stem = entry.path().stem().string();
        if ((ext == ".ppm" || ext == ".pgm") && !stem.ends_with("_mask"))
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RawSample> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        RawSample s;
        s.id = f.stem().string();
        s.image = read_ppm(f);
        for (const char* mask_ext : {".pgm", ".ppm"}) {
            fs::path mask_path = f.parent_path() / (s.id + "_mask" + std::string(mask_ext));
            if (fs::exists(mask_path)) {
                s.mask = read_mask_pgm(mask_path);
                break;
            }
        }
        if (auto it = labels.find(s.id); it != labels.end()) s.labels = it->second;
        out.push_back(std::move(s));
    }
    return out;
}

void write_sample(const fs::path& path, const ProcessedSample& sample) {
    json j;
    j["version"] = 1;
    j["id"] = sample.id;
    j["h"] = sample.image.h;
    j["w"] = sample.image.w;
    j["c"] = sample.image.c;
    j["image"] = sample.image.v;
    if (sample.mask) j["mask"] = sample.mask->v;
    if (!sample.labels.empty()) j["labels"] = sample.labels;
    j["steps"] = sample.steps;
    std::vector<uint8_t> bytes = json::to_cbor(j);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("write_sample: cannot open " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
}

ProcessedSample read_sample(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_sample: cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    json j = json::from_cbor(bytes);
    ProcessedSample s;
    s.id = j.at("id").get<std::string>();
    s.image = Image(j.at("h").get<int>(), j.at("w").get<int>(), j.at("c").get<int>());
    s.image.v = j.at("image").get<std::vector<double>>();
    if (s.image.v.size() != static_cast<size_t>(s.image.pixels()) * s.image.c)
        throw std::runtime_error("read_sample: image payload size mismatch");
    if (j.contains("mask")) {
        Mask m(s.image.h, s.image.w);
        m.v = j.at("mask").get<std::vector<int>>();
        if (m.v.size() != static_cast<size_t>(m.pixels()))
            throw std::runtime_error("read_sample: mask payload size mismatch");
        s.mask = std::move(m);
    }
    if (j.contains("labels")) s.labels = j.at("labels").get<std::vector<int>>();
    s.steps = j.at("steps").get<std::vector<json>>();
    return s;
}

void write_manifest(const fs::path& path, const Manifest& m) {
    json j;
    j["version"] = 1;
    j["train"] = m.train;
    j["val"] = m.val;
    j["test"] = m.test;
    json lf = json::object();
    for (const auto& [key, split] : m.label_fractions)
        lf[key] = {{"labeled", split.labeled},
                   {"unlabeled", split.unlabeled},
                   {"fraction", split.fraction},
                   {"seed", split.seed}};
    j["label_fractions"] = lf;
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    json j = json::parse(in);
    Manifest m;
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    for (const auto& [key, val] : j.at("label_fractions").items()) {
        LabelFractionSplit s;
        s.labeled = val.at("labeled").get<std::vector<std::string>>();
        s.unlabeled = val.at("unlabeled").get<std::vector<std::string>>();
        s.fraction = val.at("fraction").get<double>();
        s.seed = val.at("seed").get<uint64_t>();
        m.label_fractions[key] = std::move(s);
    }
    return m;
}

SampleSet SampleSet::load(const fs::path& dir, const std::vector<std::string>& ids) {
    std::vector<ProcessedSample> items;
    items.reserve(ids.size());
    for (const auto& id : ids) items.push_back(read_sample(dir / (id + ".s4ms")));
    return SampleSet(std::move(items));
}

}  // namespace s4mi::data
