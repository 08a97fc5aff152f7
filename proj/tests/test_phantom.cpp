#include "oracles.hpp"
#include "wsl/phantom.hpp"
#include "wsl/tensor_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace wsl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

bool inside(const Tensor& mask, const Tensor& region) {
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0 && region[i] == 0.0) return false;
    return true;
}

} // namespace

TEST_SUITE("phantom_data") {

TEST_CASE("class contracts per sample") {
    Rng rng(30);
    for (int pid = 0; pid < 30; ++pid) {
        const Label label = static_cast<Label>(pid % 3);
        for (const auto& s : generate_patient(pid, label, 4, 64, rng)) {
            CHECK(s.image.dims() == Dims{64, 64});
            const auto [lo, hi] = std::minmax_element(s.image.data().begin(), s.image.data().end());
            CHECK(*lo >= 0.0);
            CHECK(*hi <= 1.0);
            CHECK(inside(s.lesion_mask, s.lung_mask));
            const std::size_t n = oracle::flood_components(s.lesion_mask);
            if (label == Label::NP) CHECK(n == 0);
            if (label == Label::CAP) CHECK(n == 1);
            if (label == Label::COVID) {
                CHECK(n >= 2);
                CHECK(n <= 5);
            }
            CHECK(count_components(s.lesion_mask) == n);
            CHECK(s.patient_id == pid);
        }
    }
}

TEST_CASE("1000 CAP masks are single components") {
    Rng rng(31);
    std::size_t bad = 0;
    for (int pid = 0; pid < 125; ++pid)
        for (const auto& s : generate_patient(pid, Label::CAP, 8, 64, rng)) bad += oracle::flood_components(s.lesion_mask) != 1;
    CHECK(bad == 0);
}

TEST_CASE("generation is deterministic and validates size") {
    Rng a(32), b(32);
    const auto x = generate_patient(3, Label::COVID, 3, 48, a);
    const auto y = generate_patient(3, Label::COVID, 3, 48, b);
    REQUIRE(x.size() == 3);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(bitwise_equal(x[i].image, y[i].image));
        CHECK(x[i].lesion_mask == y[i].lesion_mask);
    }
    Rng c(1);
    CHECK_THROWS_AS(generate_patient(0, Label::CAP, 1, 16, c), GenerationError);
}

TEST_CASE("dataset on disk") {
    const fs::path dir = fs::temp_directory_path() / "wsl_test_phantom";
    fs::remove_all(dir);
    DatasetSpec spec;
    spec.seed = 7;
    const DatasetIndex idx = generate_dataset(spec, dir / "a");
    CHECK(idx.records.size() == 240);
    CHECK(idx.class_counts == std::vector<std::size_t>{80, 80, 80});
    const std::string text = slurp(dir / "a" / kIndexFileName);
    CHECK(text.rfind("wsds v1\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 241);

    generate_dataset(spec, dir / "b");
    CHECK(text == slurp(dir / "b" / kIndexFileName));
    CHECK(slurp(dir / "a" / idx.records[17].image_path) == slurp(dir / "b" / idx.records[17].image_path));

    const DatasetIndex back = read_index(dir / "a" / kIndexFileName);
    CHECK(back.records.size() == 240);
    CHECK(back.class_counts == idx.class_counts);
    CHECK(load_tensor(back.image_file(back.records[5])).dims() == Dims{64, 64});

    std::ofstream(dir / "bad.tsv") << "wsds v2\n";
    CHECK_THROWS_AS(read_index(dir / "bad.tsv"), FormatError);
    std::ofstream(dir / "bad2.tsv") << "wsds v1\nimages/x.wst\tmasks/x.wst\tseven\t0\t0\n";
    CHECK_THROWS_AS(read_index(dir / "bad2.tsv"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("imbalance ratio") {
    DatasetSpec spec;
    spec.patients_per_class = 20;
    spec.class_ratio = {1.0, 1.0, 0.25};
    CHECK(patients_for_class(spec, 0) == 20);
    CHECK(patients_for_class(spec, 1) == 20);
    CHECK(patients_for_class(spec, 2) == 5);
}

TEST_CASE("patient-level folds") {
    DatasetIndex idx;
    idx.class_counts = {0, 0, 0};
    for (int pid = 0; pid < 30; ++pid)
        for (int s = 0; s < 2; ++s) {
            idx.records.push_back({"i", "m", pid / 10, pid, s});
            idx.class_counts[static_cast<std::size_t>(pid / 10)]++;
        }
    const auto folds = kfold_split(idx, 5, 3);
    REQUIRE(folds.size() == 5);
    std::multiset<int> tested;
    for (const auto& f : folds) {
        std::map<int, int> per_class_test, per_class_val, per_class_train;
        for (int p : f.test) per_class_test[p / 10]++;
        for (int p : f.val) per_class_val[p / 10]++;
        for (int p : f.train) per_class_train[p / 10]++;
        for (int c = 0; c < 3; ++c) {
            CHECK(per_class_test[c] == 2);
            CHECK(per_class_val[c] == 2);
            CHECK(per_class_train[c] == 6);
        }
        CHECK_NOTHROW(check_split(f, idx.patients()));
        tested.insert(f.test.begin(), f.test.end());
    }
    CHECK(tested.size() == 30);
    CHECK(std::set<int>(tested.begin(), tested.end()).size() == 30);
    CHECK(kfold_split(idx, 5, 3)[2].test == folds[2].test);

    FoldSplit broken = folds[0];
    broken.val.push_back(broken.test.front());
    CHECK_THROWS_AS(check_split(broken, idx.patients()), ContractError);
    CHECK_THROWS_AS(kfold_split(idx, 11, 3), ContractError);

    for (int k = 2; k <= 10; ++k) {
        for (const auto& f : kfold_split(idx, k, 100 + k)) CHECK_NOTHROW(check_split(f, idx.patients()));
    }
}

}
