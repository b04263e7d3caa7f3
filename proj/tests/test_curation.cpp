#include "doctest.h"

#include <filesystem>
#include <map>
#include <set>

#include "curation_corpus.hpp"
#include "lipsync/curation.hpp"
#include "lipsync/errors.hpp"

using namespace lipsync;
namespace ts = testsupport;
namespace fs = std::filesystem;

namespace {

using FaceSizes = std::vector<std::optional<std::pair<double, double>>>;

CurationAdapters default_adapters() {
    static LuminanceDetector detector;
    static SharpnessQuality quality;
    static EnergyAlignment alignment;
    return CurationAdapters{&detector, &quality, &alignment};
}

const ts::CorpusPaths& corpus() {
    static ts::CorpusPaths paths =
        ts::build_curation_corpus(fs::temp_directory_path() / "lipsync_test_corpus");
    return paths;
}

}  // namespace

TEST_SUITE("curation.gates") {
    TEST_CASE("resolution gate at the 228x228 threshold") {
        FaceSizes all_small(10, std::make_pair(200.0, 200.0));
        CHECK_FALSE(resolution_gate(all_small));  // never exceeds -> discard

        FaceSizes one_big(10, std::make_pair(100.0, 100.0));
        one_big[4] = std::make_pair(240.0, 240.0);
        CHECK(resolution_gate(one_big));  // one exceeding frame negates "never"

        // both sides must exceed the threshold
        FaceSizes tall(5, std::make_pair(200.0, 300.0));
        CHECK_FALSE(resolution_gate(tall));

        FaceSizes missing(5, std::nullopt);
        try {
            resolution_gate(missing);
            FAIL("expected NO_FACE");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::NoFace);
        }
    }

    TEST_CASE("jitter segmentation cuts strictly above the threshold") {
        std::vector<BoundingBox> still(20, BoundingBox{10, 10, 20, 20});
        auto one = jitter_segment(still, 5.0);
        CHECK(one == std::vector<std::pair<int64_t, int64_t>>{{0, 20}});

        std::vector<BoundingBox> jumpy = still;
        for (size_t f = 10; f < jumpy.size(); ++f) {
            jumpy[f] = BoundingBox{20, 10, 30, 20};  // center moved 10 px = 2x threshold
        }
        auto two = jitter_segment(jumpy, 5.0);
        CHECK(two == std::vector<std::pair<int64_t, int64_t>>{{0, 10}, {10, 20}});

        std::vector<BoundingBox> edge = still;
        for (size_t f = 10; f < edge.size(); ++f) {
            edge[f] = BoundingBox{15, 10, 25, 20};  // displacement exactly 5.0
        }
        auto uncut = jitter_segment(edge, 5.0);
        CHECK(uncut.size() == 1);  // strict inequality: no cut at the boundary
    }

    TEST_CASE("jitter ranges partition the frame range") {
        Rng rng(3);
        std::vector<BoundingBox> boxes;
        double x = 50;
        for (int f = 0; f < 60; ++f) {
            x += (rng.uniform() - 0.3) * 12.0;
            boxes.push_back(BoundingBox{x, 40, x + 30, 70});
        }
        auto ranges = jitter_segment(boxes, 6.0);
        int64_t expect_start = 0;
        for (auto [s, e] : ranges) {
            CHECK(s == expect_start);
            CHECK(e > s);
            expect_start = e;
        }
        CHECK(expect_start == 60);
    }

    TEST_CASE("length gate boundary at two seconds") {
        CHECK_FALSE(length_gate(49, 25.0, 2.0));  // 1.96 s
        CHECK(length_gate(50, 25.0, 2.0));        // exactly 2 s is inclusive
        CHECK(length_gate(500, 25.0, 2.0));
    }
}

TEST_SUITE("curation.pipeline") {
    TEST_CASE("empty source list gives an empty manifest") {
        CurationManifest manifest = run_pipeline({}, default_adapters(), CurationThresholds{});
        CHECK(manifest.records.empty());
    }

    TEST_CASE("each engineered clip fails exactly its designed filter") {
        const auto& paths = corpus();
        CurationManifest manifest =
            run_pipeline(paths.failing, default_adapters(), CurationThresholds{});
        REQUIRE(manifest.records.size() == 6);
        CHECK(manifest.survivors().empty());

        std::map<std::string, std::string> failed_filter;
        for (const auto& r : manifest.records) {
            int fails = 0;
            for (const auto& [filter, verdict] : r.verdicts) {
                if (verdict == "fail") {
                    ++fails;
                    failed_filter[fs::path(r.source).filename().string()] = filter;
                }
            }
            CHECK(fails == 1);  // exactly one failing filter per clip
        }
        CHECK(failed_filter["no_face"] == "detect");
        CHECK(failed_filter["gap_fail"] == "gap");
        CHECK(failed_filter["small_face"] == "resolution");
        CHECK(failed_filter["blurry"] == "quality");
        CHECK(failed_filter["too_short"] == "length");
        CHECK(failed_filter["silent"] == "alignment");

        // six distinct failure verdicts
        std::set<std::string> distinct;
        for (const auto& [clip, filter] : failed_filter) {
            distinct.insert(filter);
        }
        CHECK(distinct.size() == 6);
    }

    TEST_CASE("an all-pass clip survives with every verdict pass") {
        const auto& paths = corpus();
        CurationManifest manifest =
            run_pipeline({paths.all_pass}, default_adapters(), CurationThresholds{});
        REQUIRE(manifest.records.size() == 1);
        const CurationRecord& r = manifest.records[0];
        CHECK_FALSE(r.output_path.empty());
        for (const auto& name : kCurationFilterOrder) {
            CHECK(r.verdicts.at(name) == "pass");
        }
        CHECK(r.max_face_w > 228.0);
        CHECK(r.max_face_h > 228.0);
        CHECK(r.time_range == std::make_pair<int64_t, int64_t>(0, 75));
    }

    TEST_CASE("a mid-clip jump is cut into two surviving segments") {
        const auto& paths = corpus();
        auto out_dir = fs::temp_directory_path() / "lipsync_test_curated";
        fs::remove_all(out_dir);
        CurationManifest manifest =
            run_pipeline({paths.jitter}, default_adapters(), CurationThresholds{}, out_dir);
        auto survivors = manifest.survivors();
        REQUIRE(survivors.size() == 2);
        CHECK(survivors[0]->time_range == std::make_pair<int64_t, int64_t>(0, 55));
        CHECK(survivors[1]->time_range == std::make_pair<int64_t, int64_t>(55, 110));
        CHECK(survivors[0]->jitter_cuts == 1);
        // emitted clips decode and respect the cut lengths
        VideoClip seg0 = load_video(survivors[0]->output_path);
        CHECK(seg0.frame_count() == 55);
        CHECK(seg0.audio.has_value());
    }

    TEST_CASE("re-running the pipeline reproduces the manifest exactly") {
        const auto& paths = corpus();
        std::vector<fs::path> sources = paths.failing;
        sources.push_back(paths.all_pass);
        CurationThresholds thresholds;
        CurationManifest a = run_pipeline(sources, default_adapters(), thresholds);
        CurationManifest b = run_pipeline(sources, default_adapters(), thresholds);
        REQUIRE(a.records.size() == b.records.size());
        for (size_t i = 0; i < a.records.size(); ++i) {
            CHECK(a.records[i].source == b.records[i].source);
            CHECK(a.records[i].verdicts == b.records[i].verdicts);
            CHECK(a.records[i].quality_score == b.records[i].quality_score);
            CHECK(a.records[i].time_range == b.records[i].time_range);
        }
    }

    TEST_CASE("manifest io round trip and resume") {
        const auto& paths = corpus();
        CurationThresholds thresholds;
        CurationManifest first =
            run_pipeline({paths.failing[0], paths.failing[1]}, default_adapters(), thresholds);
        auto manifest_path = fs::temp_directory_path() / "lipsync_test_manifest.jsonl";
        save_manifest(first, manifest_path);
        CurationManifest loaded = load_manifest(manifest_path);
        REQUIRE(loaded.records.size() == first.records.size());
        CHECK(loaded.records[0].verdicts == first.records[0].verdicts);

        // resume: already-processed sources carry over, new ones are processed
        std::vector<fs::path> sources = {paths.failing[0], paths.failing[1], paths.all_pass};
        CurationManifest resumed =
            run_pipeline(sources, default_adapters(), thresholds, {}, &loaded);
        CHECK(resumed.records.size() == 3);
        CHECK(resumed.records[0].verdicts == first.records[0].verdicts);
        CHECK_FALSE(resumed.records[2].output_path.empty());
    }

    TEST_CASE("unreadable sources are recorded, not thrown") {
        CurationManifest manifest = run_pipeline({fs::path("/nonexistent/clip")},
                                                 default_adapters(), CurationThresholds{});
        REQUIRE(manifest.records.size() == 1);
        CHECK_FALSE(manifest.records[0].error.empty());
        CHECK(manifest.survivors().empty());
    }

    TEST_CASE("no emitted clip violates any threshold on re-validation") {
        const auto& paths = corpus();
        std::vector<fs::path> sources = paths.failing;
        sources.push_back(paths.all_pass);
        sources.push_back(paths.jitter);
        CurationThresholds thresholds;
        auto out_dir = fs::temp_directory_path() / "lipsync_test_curated2";
        fs::remove_all(out_dir);
        CurationManifest manifest =
            run_pipeline(sources, default_adapters(), thresholds, out_dir);
        for (const auto* r : manifest.survivors()) {
            VideoClip clip = load_video(r->output_path);
            CHECK(length_gate(clip.frame_count(), clip.fps, thresholds.min_seconds));
            CHECK(default_adapters().quality->score(clip) >= thresholds.quality_min);
            CHECK(default_adapters().alignment->aligned(clip));
        }
    }
}
