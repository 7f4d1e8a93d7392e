#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "breathscan/audio_io.hpp"
#include "breathscan/nn.hpp"
#include "breathscan/util.hpp"

using namespace breathscan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() / format_str("breathscan_audio_test_%d_%d", getpid(), counter++);
    fs::create_directories(dir);
    return dir;
}

// Minimal hand-rolled wav writer so load_wav is tested against independent
// bytes, not against write_wav.
void write_raw_wav(const std::string& path, const std::vector<std::int16_t>& interleaved,
                   int channels, int rate, int truncate_bytes = 0) {
    std::ofstream f(path, std::ios::binary);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
    auto w16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    auto w32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    f.write("RIFF", 4);
    w32(36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    w32(16);
    w16(1);
    w16(static_cast<std::uint16_t>(channels));
    w32(static_cast<std::uint32_t>(rate));
    w32(static_cast<std::uint32_t>(rate * channels * 2));
    w16(static_cast<std::uint16_t>(channels * 2));
    w16(16);
    f.write("data", 4);
    w32(data_bytes);
    const std::size_t keep = truncate_bytes > 0 ? data_bytes - truncate_bytes : data_bytes;
    f.write(reinterpret_cast<const char*>(interleaved.data()), static_cast<long>(keep));
}

}  // namespace

TEST_CASE("16-bit samples scale by 2^15") {
    const auto dir = temp_dir();
    const auto path = (dir / "scale.wav").string();
    write_raw_wav(path, {16384, -16384}, 1, 16000);
    const AudioClip clip = load_wav(path);
    REQUIRE(clip.samples.size() == 2);
    CHECK(clip.samples[0] == 0.5);
    CHECK(clip.samples[1] == -0.5);
    CHECK(clip.sample_rate == 16000);
    CHECK(clip.utterance_id == "scale");
}

TEST_CASE("stereo channels average to mono") {
    const auto dir = temp_dir();
    const auto path = (dir / "stereo.wav").string();
    write_raw_wav(path, {32767, 0, -32768, 0}, 2, 22050);
    const AudioClip clip = load_wav(path);
    REQUIRE(clip.samples.size() == 2);
    CHECK(clip.samples[0] == doctest::Approx(32767.0 / 32768.0 / 2.0));
    CHECK(clip.samples[1] == doctest::Approx(-0.5));
}

TEST_CASE("truncated data chunk is a format error") {
    const auto dir = temp_dir();
    const auto path = (dir / "trunc.wav").string();
    write_raw_wav(path, {100, 200, 300, 400}, 1, 16000, /*truncate_bytes=*/4);
    CHECK_THROWS_AS(load_wav(path), FormatError);
}

TEST_CASE("unsupported codec is rejected with a codec error") {
    const auto dir = temp_dir();
    const auto path = (dir / "alaw.wav").string();
    // audio_format 6 (a-law)
    std::ofstream f(path, std::ios::binary);
    auto w16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    auto w32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    f.write("RIFF", 4);
    w32(36 + 4);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    w32(16);
    w16(6);
    w16(1);
    w32(8000);
    w32(8000);
    w16(1);
    w16(8);
    f.write("data", 4);
    w32(4);
    w32(0);
    f.close();
    CHECK_THROWS_WITH_AS(load_wav(path), doctest::Contains("unsupported codec"), FormatError);
}

TEST_CASE("16-bit PCM round trips bit-exactly") {
    const auto dir = temp_dir();
    const auto path = (dir / "roundtrip.wav").string();
    nn::Rng rng(11);
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.utterance_id = "roundtrip";
    for (int i = 0; i < 4096; ++i) {
        const auto q = static_cast<std::int16_t>(rng.below(65536) - 32768);
        clip.samples.push_back(q / 32768.0);
    }
    write_wav(path, clip);
    const AudioClip back = load_wav(path);
    REQUIRE(back.samples.size() == clip.samples.size());
    CHECK(back.samples == clip.samples);
    CHECK(back.sample_rate == clip.sample_rate);
}

TEST_CASE("resample at equal rates is the identity") {
    AudioClip clip;
    clip.sample_rate = 22050;
    clip.samples = {0.1, -0.2, 0.3};
    const AudioClip out = resample(clip, 22050);
    CHECK(out.samples == clip.samples);
}

TEST_CASE("resampled 100 Hz tone matches the analytically sampled sine") {
    AudioClip clip;
    clip.sample_rate = 22050;
    clip.utterance_id = "tone";
    clip.samples.resize(22050);
    for (int i = 0; i < 22050; ++i) clip.samples[i] = std::sin(2.0 * M_PI * 100.0 * i / 22050.0);

    const AudioClip out = resample(clip, 16000);
    CHECK(std::abs(static_cast<long>(out.samples.size()) - 16000) <= 1);

    double err2 = 0.0;
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const double expect = std::sin(2.0 * M_PI * 100.0 * static_cast<double>(i) / 16000.0);
        err2 += (out.samples[i] - expect) * (out.samples[i] - expect);
    }
    const double rms = std::sqrt(err2 / static_cast<double>(out.samples.size()));
    CHECK(rms < 1e-3);
}

TEST_CASE("DC level survives resampling to within 1e-6") {
    AudioClip clip;
    clip.sample_rate = 22050;
    clip.samples.assign(22050, 0.3);
    const AudioClip out = resample(clip, 16000);
    for (double v : out.samples) CHECK(std::abs(v - 0.3) < 1e-6);
}

TEST_CASE("round-trip resampling preserves band-limited tone RMS within 1 percent") {
    nn::Rng rng(5);
    for (double freq : {440.0, 1200.0, 3000.0}) {
        AudioClip clip;
        clip.sample_rate = 22050;
        clip.samples.resize(22050);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < 22050; ++i)
            clip.samples[i] = 0.8 * std::sin(2.0 * M_PI * freq * i / 22050.0 + phase);

        const AudioClip back = resample(resample(clip, 16000), 22050);
        auto rms = [](const std::vector<double>& v) {
            double acc = 0.0;
            for (double x : v) acc += x * x;
            return std::sqrt(acc / static_cast<double>(v.size()));
        };
        CHECK(rms(back.samples) == doctest::Approx(rms(clip.samples)).epsilon(0.01));
    }
}

TEST_CASE("pause TSV parses, groups and sorts") {
    const auto dir = temp_dir();
    const auto path = (dir / "pauses.tsv").string();
    write_text_file(path,
                    "# comment line\n"
                    "utt1\t0.50\t0.92\n"
                    "utt2\t1.0\t1.5\n"
                    "utt1\t0.10\t0.30\n"
                    "\n");
    const auto pauses = parse_pause_file(path);
    REQUIRE(pauses.size() == 2);
    REQUIRE(pauses.at("utt1").size() == 2);
    CHECK(pauses.at("utt1")[0].start == 0.10);
    CHECK(pauses.at("utt1")[1].start == 0.50);
    CHECK(pauses.at("utt1")[1].end == 0.92);
    CHECK(pauses.at("utt2")[0].end == 1.5);
}

TEST_CASE("inverted pause interval names its line") {
    const auto dir = temp_dir();
    const auto path = (dir / "inverted.tsv").string();
    write_text_file(path, "utt1\t0.5\t0.9\nutt1\t1.4\t1.2\n");
    CHECK_THROWS_WITH_AS(parse_pause_file(path), doctest::Contains(":2"), ValidationError);
}

TEST_CASE("overlapping pause intervals name the offending line") {
    const auto dir = temp_dir();
    const auto path = (dir / "overlap.tsv").string();
    write_text_file(path, "utt1\t0.1\t0.3\nutt1\t0.2\t0.4\n");
    CHECK_THROWS_WITH_AS(parse_pause_file(path), doctest::Contains("overlap"), ValidationError);
    // touching intervals are fine
    const auto path2 = (dir / "touch.tsv").string();
    write_text_file(path2, "utt1\t0.1\t0.3\nutt1\t0.3\t0.4\n");
    CHECK(parse_pause_file(path2).at("utt1").size() == 2);
}

TEST_CASE("malformed pause lines are positioned errors") {
    const auto dir = temp_dir();
    const auto path = (dir / "bad.tsv").string();
    write_text_file(path, "utt1\t0.5\n");
    CHECK_THROWS_WITH_AS(parse_pause_file(path), doctest::Contains(":1"), ValidationError);
    const auto path2 = (dir / "badnum.tsv").string();
    write_text_file(path2, "utt1\tzero\t0.5\n");
    CHECK_THROWS_AS(parse_pause_file(path2), ValidationError);
}
