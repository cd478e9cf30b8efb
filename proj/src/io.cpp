#include "xfer/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xfer::io {

std::string digest(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string digest(const json& j) { return digest(j.dump()); }

json load_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    json j;
    f >> j;
    return j;
}

void save_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

namespace {
constexpr char kMagic[4] = {'X', 'A', 'D', 'V'};
constexpr uint16_t kVersion = 1;
constexpr uint16_t kDtypeF32 = 0;

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw std::runtime_error("xadv: truncated file");
    return v;
}
}  // namespace

void write_xadv(const std::filesystem::path& path, const Tensor& t) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(kMagic, 4);
    put<uint16_t>(f, kVersion);
    put<uint16_t>(f, kDtypeF32);
    put<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put<uint32_t>(f, static_cast<uint32_t>(d));
    for (double v : t.data) put<float>(f, static_cast<float>(v));
}

Tensor read_xadv(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("xadv: bad magic in " + path.string());
    const auto version = get<uint16_t>(f);
    if (version != kVersion)
        throw std::runtime_error("xadv: unsupported version " + std::to_string(version));
    const auto dtype = get<uint16_t>(f);
    if (dtype != kDtypeF32)
        throw std::runtime_error("xadv: unsupported dtype " + std::to_string(dtype));
    const auto rank = get<uint32_t>(f);
    if (rank > 8) throw std::runtime_error("xadv: implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<uint32_t>(f));
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<double>(get<float>(f));
    return t;
}

Tensor stack(const std::vector<Tensor>& items) {
    if (items.empty()) throw std::invalid_argument("stack: empty batch");
    std::vector<int> shape;
    shape.push_back(static_cast<int>(items.size()));
    for (int d : items[0].shape) shape.push_back(d);
    Tensor out(shape);
    const size_t per = items[0].data.size();
    for (size_t i = 0; i < items.size(); ++i) {
        if (!items[i].same_shape(items[0]))
            throw std::invalid_argument("stack: ragged batch");
        std::copy(items[i].data.begin(), items[i].data.end(), out.data.begin() + i * per);
    }
    return out;
}

std::vector<Tensor> unstack(const Tensor& batch) {
    if (batch.shape.empty()) throw std::invalid_argument("unstack: scalar");
    const int n = batch.shape[0];
    std::vector<int> inner(batch.shape.begin() + 1, batch.shape.end());
    const size_t per = static_cast<size_t>(Tensor::count(inner));
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor t(inner);
        std::copy(batch.data.begin() + i * per, batch.data.begin() + (i + 1) * per,
                  t.data.begin());
        out.push_back(std::move(t));
    }
    return out;
}

namespace {
std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}
}  // namespace

void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) f << ",";
            f << csv_escape(row[i]);
        }
        f << "\n";
    }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::string cell;
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cell += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                row.push_back(cell);
                cell.clear();
            } else {
                cell += c;
            }
        }
        row.push_back(cell);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace xfer::io
