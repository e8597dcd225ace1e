// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/activation_store.hpp"

#include <algorithm>

#include "dreamreader/fileio.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {

namespace {
constexpr char kActMagic[7] = "DRACT1";
}

ActivationFile write_records(const std::vector<ActivationRecord>& records,
                             const std::filesystem::path& destination,
                             const std::string& model_id,
                             const std::string& dataset_version) {
    require(!records.empty(), Errc::empty_set, "write_records: no records");
    const ActivationRecord& first = records.front();
    for (const ActivationRecord& r : records) {
        require(r.site == first.site, Errc::heterogeneous_records,
                "records mix sites '" + r.site.display() + "' and '" + first.site.display() +
                    "'");
        require(r.value.shape == first.value.shape, Errc::heterogeneous_records,
                "records mix shapes " + shape_str(r.value.shape) + " and " +
                    shape_str(first.value.shape));
        require(r.dtype == first.dtype, Errc::heterogeneous_records, "records mix dtypes");
        require(r.seed == first.seed, Errc::heterogeneous_records, "records mix seeds");
    }

    nlohmann::json rec_index = nlohmann::json::array();
    for (const ActivationRecord& r : records)
        rec_index.push_back({r.prompt_id, r.timestep});

    nlohmann::json header{
        {"format", "dract"},
        {"dtype", dtype_name(first.dtype)},
        {"site", first.site.path},
        {"role", role_name(first.site.role)},
        {"head_index",
         first.site.head_index ? nlohmann::json(*first.site.head_index) : nlohmann::json()},
        {"schedule", first.site.schedule.selected},
        {"shape", first.value.shape},
        {"num_records", records.size()},
        {"records", rec_index},
        {"seed", first.seed},
        {"model_id", model_id},
        {"dataset_version", dataset_version},
    };

    std::vector<const std::vector<float>*> blocks;
    blocks.reserve(records.size());
    for (const ActivationRecord& r : records) blocks.push_back(&r.value.data);
    write_envelope(destination, kActMagic, header, blocks);

    ActivationFile file;
    file.site = first.site;
    file.dtype = first.dtype;
    file.shape = first.value.shape;
    file.seed = first.seed;
    file.model_id = model_id;
    file.dataset_version = dataset_version;
    file.records = records;
    return file;
}

ActivationFile open_activation_file(const std::filesystem::path& path) {
    RawEnvelope env = read_envelope(path, kActMagic);
    const auto& h = env.header;
    for (const char* key : {"site", "role", "schedule", "shape", "num_records", "records"})
        require(h.contains(key), Errc::corrupt_header,
                std::string("dract header missing '") + key + "': " + path.string());

    ActivationFile file;
    file.site.path = h.at("site").get<std::string>();
    const std::string role = h.at("role").get<std::string>();
    require(role == "output" || role == "input", Errc::corrupt_header,
            "bad role '" + role + "' in " + path.string());
    file.site.role = role == "output" ? TensorRole::output : TensorRole::input;
    if (h.contains("head_index") && !h.at("head_index").is_null())
        file.site.head_index = h.at("head_index").get<int>();
    file.site.schedule = TimestepSchedule::list(h.at("schedule").get<std::vector<int>>());
    file.shape = h.at("shape").get<std::vector<int>>();
    file.seed = h.value("seed", uint64_t{0});
    file.model_id = h.value("model_id", std::string{});
    file.dataset_version = h.value("dataset_version", std::string{});

    const auto num = h.at("num_records").get<int64_t>();
    const auto& rec_index = h.at("records");
    require(rec_index.is_array() && static_cast<int64_t>(rec_index.size()) == num,
            Errc::corrupt_header, "record index length != num_records in " + path.string());

    int64_t per = 1;
    for (int s : file.shape) per *= s;
    require(static_cast<int64_t>(env.body.size()) == per * num,
            static_cast<int64_t>(env.body.size()) < per * num ? Errc::truncated_body
                                                              : Errc::corrupt_header,
            "body holds " + std::to_string(env.body.size()) + " floats, header declares " +
                std::to_string(per * num) + " in " + path.string());

    file.records.reserve(static_cast<size_t>(num));
    for (int64_t i = 0; i < num; ++i) {
        ActivationRecord r;
        r.site = file.site;
        r.prompt_id = rec_index[static_cast<size_t>(i)].at(0).get<std::string>();
        r.timestep = rec_index[static_cast<size_t>(i)].at(1).get<int>();
        r.dtype = file.dtype;
        r.seed = file.seed;
        r.value.shape = file.shape;
        r.value.data.assign(env.body.begin() + i * per, env.body.begin() + (i + 1) * per);
        file.records.push_back(std::move(r));
    }
    return file;
}

std::vector<ActivationRecord> read_records(const std::filesystem::path& path) {
    return open_activation_file(path).records;
}

std::string activation_file_stem(const HookSite& site) {
    std::string stem = site.path;
    size_t pos = 0;
    while ((pos = stem.find('.', pos)) != std::string::npos) {
        stem.replace(pos, 1, "__");
        pos += 2;
    }
    if (site.head_index) stem += "_h" + std::to_string(*site.head_index);
    if (site.role == TensorRole::input) stem += "_input";
    return stem;
}

Eigen::MatrixXf flattened_matrix(const ActivationFile& file) {
    int64_t per = 1;
    for (int s : file.shape) per *= s;
    Eigen::MatrixXf m(static_cast<Eigen::Index>(file.records.size()), per);
    for (size_t i = 0; i < file.records.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = file.records[i].value.as_vector().transpose();
    return m;
}

namespace {
// Runs of equal prompt_id, in file order.
std::vector<std::pair<int64_t, int64_t>> prompt_groups(const ActivationFile& f) {
    std::vector<std::pair<int64_t, int64_t>> groups;  // [begin, end)
    const int64_t n = static_cast<int64_t>(f.records.size());
    int64_t begin = 0;
    for (int64_t i = 1; i <= n; ++i) {
        if (i == n || f.records[static_cast<size_t>(i)].prompt_id !=
                          f.records[static_cast<size_t>(begin)].prompt_id) {
            groups.emplace_back(begin, i);
            begin = i;
        }
    }
    return groups;
}
}  // namespace

PairedBatchIterator::PairedBatchIterator(const ActivationFile& source,
                                         const ActivationFile& target, int batch_size,
                                         uint64_t shuffle_seed)
    : source_(source), target_(target), batch_size_(batch_size) {
    require(batch_size_ >= 1, Errc::count_mismatch, "batch_size must be >= 1");
    require(source_.records.size() == target_.records.size(), Errc::count_mismatch,
            "paired files hold " + std::to_string(source_.records.size()) + " vs " +
                std::to_string(target_.records.size()) + " records");
    for (size_t i = 0; i < source_.records.size(); ++i)
        require(source_.records[i].prompt_id == target_.records[i].prompt_id,
                Errc::pairing_mismatch,
                "record " + std::to_string(i) + " pairs prompt '" +
                    source_.records[i].prompt_id + "' with '" + target_.records[i].prompt_id +
                    "'");

    auto groups = prompt_groups(source_);
    SeededRng rng(shuffle_seed);
    std::vector<int64_t> group_order =
        random_permutation(rng, static_cast<int64_t>(groups.size()));
    order_.reserve(source_.records.size());
    for (int64_t g : group_order)
        for (int64_t i = groups[static_cast<size_t>(g)].first;
             i < groups[static_cast<size_t>(g)].second; ++i)
            order_.push_back(i);
}

int PairedBatchIterator::num_batches() const {
    const int64_t n = num_records();
    return static_cast<int>((n + batch_size_ - 1) / batch_size_);
}

std::optional<PairedBatch> PairedBatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);

    int64_t p = 1, q = 1;
    for (int s : source_.shape) p *= s;
    for (int s : target_.shape) q *= s;

    PairedBatch batch;
    batch.source.resize(static_cast<Eigen::Index>(take), p);
    batch.target.resize(static_cast<Eigen::Index>(take), q);
    batch.indices.reserve(take);
    for (size_t i = 0; i < take; ++i) {
        const int64_t idx = order_[cursor_ + i];
        batch.indices.push_back(idx);
        batch.source.row(static_cast<Eigen::Index>(i)) =
            source_.records[static_cast<size_t>(idx)].value.as_vector().transpose();
        batch.target.row(static_cast<Eigen::Index>(i)) =
            target_.records[static_cast<size_t>(idx)].value.as_vector().transpose();
    }
    cursor_ += take;
    return batch;
}

FileSampleStream::FileSampleStream(const ActivationFile& file, int feature_axis)
    : file_(file), feature_axis_(feature_axis) {
    require(feature_axis_ >= 0 && feature_axis_ < static_cast<int>(file_.shape.size()),
            Errc::dim_mismatch, "feature axis " + std::to_string(feature_axis_) +
                                    " of shape " + shape_str(file_.shape));
}

std::optional<ActivationSample> FileSampleStream::next() {
    while (true) {
        if (!buffered_) {
            if (record_ >= file_.records.size()) return std::nullopt;
            current_ = gather_feature_vectors(file_.records[record_].value, feature_axis_);
            row_ = 0;
            buffered_ = true;
        }
        if (row_ >= current_.rows()) {
            buffered_ = false;
            ++record_;
            continue;
        }
        const ActivationRecord& rec = file_.records[record_];
        ActivationSample s;
        s.x = current_.row(row_).transpose();
        s.prompt_id = rec.prompt_id;
        s.timestep = rec.timestep;
        ++row_;
        return s;
    }
}

}  // namespace dreamreader
