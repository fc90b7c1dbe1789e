#include "cgrs/datasets.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"

#include <httplib.h>

#include <fstream>
#include <iostream>

namespace cgrs {

std::vector<ArchiveFile> archive_files(DatasetId id) {
    switch (id) {
        case DatasetId::mnist: {
            const std::string base = "https://ossci-datasets.s3.amazonaws.com/mnist/";
            return {
                {base + "train-images-idx3-ubyte.gz", "train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"},
                {base + "train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"},
                {base + "t10k-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"},
                {base + "t10k-labels-idx1-ubyte.gz", "t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"},
            };
        }
        case DatasetId::fashion: {
            const std::string base = "https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/";
            return {
                {base + "train-images-idx3-ubyte.gz", "train-images-idx3-ubyte.gz", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"},
                {base + "train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte.gz", "25c81989df183df01b3e8a0aad5dffbe"},
                {base + "t10k-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte.gz", "bef4ecab320f06d8554ea6380940ec79"},
                {base + "t10k-labels-idx1-ubyte.gz", "t10k-labels-idx1-ubyte.gz", "bb300cfdad3c16e7a12a480ee83cd310"},
            };
        }
        case DatasetId::usps: {
            const std::string base = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/multiclass/";
            return {
                {base + "usps.bz2", "usps.bz2", "ec16c51db3855ca6c91edd34d0e9b197"},
                {base + "usps.t.bz2", "usps.t.bz2", "8ea070ee2aca1ac39742fdd1ef5ed118"},
            };
        }
        default:
            throw ConfigError("dataset '" + to_string(id) + "' is synthesised locally; use `cgrs synth`");
    }
}

namespace {

void download(const std::string& url, const std::filesystem::path& destination) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    const auto origin = url.substr(0, path_start);
    const auto path = url.substr(path_start);

    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);

    std::ofstream out(destination, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + destination.string());
    auto result = client.Get(path, [&](const char* data, std::size_t length) {
        out.write(data, static_cast<std::streamsize>(length));
        return static_cast<bool>(out);
    });
    out.close();
    if (!result) {
        throw IoError("download of " + url + " failed: " + httplib::to_string(result.error()));
    }
    if (result->status != 200) {
        throw IoError("download of " + url + " failed with HTTP status " + std::to_string(result->status));
    }
}

}  // namespace

void fetch_dataset(DatasetId id, const std::filesystem::path& root) {
    const auto dir = archive_dir(root, id);
    std::filesystem::create_directories(dir);
    for (const auto& file : archive_files(id)) {
        const auto target = dir / file.filename;
        if (std::filesystem::exists(target) && md5_file_hex(target) == file.md5) {
            std::cerr << "[fetch] " << target.string() << " already present and verified\n";
            continue;
        }
        const auto partial = dir / (file.filename + ".part");
        std::cerr << "[fetch] " << file.url << '\n';
        download(file.url, partial);
        const auto got = md5_file_hex(partial);
        if (got != file.md5) {
            std::filesystem::remove(partial);
            throw IntegrityError("digest mismatch for " + file.url + ": expected md5 " + file.md5 + ", got " + got);
        }
        std::filesystem::rename(partial, target);
    }
}

}  // namespace cgrs
