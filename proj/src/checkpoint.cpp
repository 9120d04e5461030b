#include "vicp/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

using json = nlohmann::ordered_json;

namespace vicp::ckpt {

namespace {
constexpr char kMagic[8] = {'V', 'I', 'C', 'P', 'T', 'N', 'S', '1'};
}

void save_store(const nn::ParamStore& store, const std::string& path) {
    json manifest;
    manifest["schema_version"] = 1;
    manifest["frozen"] = store.frozen();
    manifest["entries"] = json::array();
    for (const auto& name : store.names()) {
        const auto& v = store.get(name).value();
        manifest["entries"].push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
    }
    const std::string header = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(header.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& name : store.names()) {
        const auto& v = store.get(name).value();
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            Eigen::RowVectorXd row = v.row(i);
            f.write(reinterpret_cast<const char*>(row.data()),
                    static_cast<std::streamsize>(sizeof(double) * v.cols()));
        }
    }
    if (!f) throw IoError("short write to checkpoint: " + path);
}

bool load_store(nn::ParamStore& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a tensor container: " + path);
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    f.read(header.data(), len);
    if (!f) throw IoError("truncated checkpoint header: " + path);

    json manifest = json::parse(header);
    if (manifest.at("schema_version").get<int>() != 1)
        throw IoError("unsupported checkpoint schema: " + path);
    for (const auto& e : manifest.at("entries")) {
        const std::string name = e.at("name").get<std::string>();
        const Eigen::Index rows = e.at("rows").get<Eigen::Index>();
        const Eigen::Index cols = e.at("cols").get<Eigen::Index>();
        if (!store.has(name)) throw IoError("checkpoint entry " + name + " unknown to this model");
        auto v = store.get(name);
        if (v.rows() != rows || v.cols() != cols)
            throw ShapeError("checkpoint entry " + name + " has mismatched shape");
        nn::Mat m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            Eigen::RowVectorXd row(cols);
            f.read(reinterpret_cast<char*>(row.data()),
                   static_cast<std::streamsize>(sizeof(double) * cols));
            m.row(i) = row;
        }
        v.node()->value = std::move(m);
    }
    if (!f) throw IoError("truncated checkpoint data: " + path);
    return manifest.at("frozen").get<bool>();
}

}  // namespace vicp::ckpt
