#pragma once

// Profile store: one JSON file per profile under <store>/profiles, an index
// rewritten atomically on every add, parent-chain validation, phone matching
// and signer filtering. Writers take an exclusive lock on <store>/.lock.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "soundcal/error.hpp"
#include "soundcal/json_io.hpp"
#include "soundcal/signals.hpp"

namespace soundcal {

inline constexpr int kProfileSchemaVersion = 1;

enum class ProfileKind { microphone, loudspeaker, manufacturer_microphone };

inline std::string to_string(ProfileKind k) {
    switch (k) {
        case ProfileKind::microphone: return "microphone";
        case ProfileKind::loudspeaker: return "loudspeaker";
        case ProfileKind::manufacturer_microphone: return "manufacturer_microphone";
    }
    return "?";
}

inline ProfileKind parse_profile_kind(const std::string& s) {
    if (s == "microphone") return ProfileKind::microphone;
    if (s == "loudspeaker") return ProfileKind::loudspeaker;
    if (s == "manufacturer_microphone") return ProfileKind::manufacturer_microphone;
    throw InvalidArgument("unknown profile kind '" + s + "'");
}

inline bool is_microphone(ProfileKind k) { return k != ProfileKind::loudspeaker; }

struct ScreenPx {
    int width = 0;
    int height = 0;
    bool operator==(const ScreenPx&) const = default;
};

/// Screen sizes match in either orientation.
inline bool same_screen(const ScreenPx& a, const ScreenPx& b) {
    return (a.width == b.width && a.height == b.height) || (a.width == b.height && a.height == b.width);
}

struct DeviceIdentity {
    std::string brand;
    std::string model_name;
    std::string model_number;
    std::optional<ScreenPx> screen_px;  // phones
    std::optional<std::string> os;
};

struct ProfileQuality {
    std::optional<double> flatness_sd_db;
    std::optional<DrcParams> drc;
    double sampling_rate_hz = 48000.0;
};

struct Profile {
    std::string id;         // assigned by the store
    std::string timestamp;  // ISO 8601 UTC, e.g. 2024-05-01T12:00:00Z
    ProfileKind kind = ProfileKind::microphone;
    DeviceIdentity identity;
    FrequencyResponse response;
    std::optional<std::string> parent_id;
    std::string signer_email;
    ProfileQuality quality;
};

// ---------------------------------------------------------------------------
// Helpers

/// Trimmed, internal whitespace collapsed to one space, ASCII lower case.
inline std::string normalize_key(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

/// Microseconds since the epoch for "YYYY-MM-DDTHH:MM:SS[.ffffff]Z".
inline std::int64_t parse_timestamp(const std::string& ts) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char tail[32] = {0};
    const int got = std::sscanf(ts.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%31s", &y, &mo, &d, &h, &mi, &s, tail);
    std::string rest = got == 7 ? tail : "";
    std::int64_t micros = 0;
    bool ok = got == 7 && !rest.empty() && rest.back() == 'Z';
    if (ok && rest.size() > 1) {
        ok = rest[0] == '.' && rest.size() >= 3 && rest.size() <= 8;
        std::string frac = rest.substr(1, rest.size() - 2);
        for (char c : frac) ok = ok && std::isdigit(static_cast<unsigned char>(c));
        if (ok) {
            frac.resize(6, '0');
            micros = std::stoll(frac);
        }
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ok || !ymd.ok() || h > 23 || mi > 59 || s > 60)
        throw InvalidArgument("invalid timestamp '" + ts + "' (expected YYYY-MM-DDTHH:MM:SSZ)");
    const auto secs = sys_days{ymd}.time_since_epoch() + hours{h} + minutes{mi} + seconds{s};
    return duration_cast<microseconds>(secs).count() + micros;
}

/// Current UTC time, second resolution.
inline std::string utc_now_iso8601() {
    const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    const auto days = std::chrono::floor<std::chrono::days>(now);
    const std::chrono::year_month_day ymd{days};
    const std::chrono::hh_mm_ss hms{now - days};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json profile_to_json(const Profile& p) {
    using json_io::json;
    json identity = {{"brand", p.identity.brand},
                     {"model_name", p.identity.model_name},
                     {"model_number", p.identity.model_number},
                     {"screen_px", p.identity.screen_px
                                       ? json::array({p.identity.screen_px->width, p.identity.screen_px->height})
                                       : json(nullptr)},
                     {"os", p.identity.os ? json(*p.identity.os) : json(nullptr)}};
    json quality = {{"flatness_sd_db", p.quality.flatness_sd_db ? json_io::number(*p.quality.flatness_sd_db)
                                                                 : json(nullptr)},
                    {"drc", p.quality.drc ? json_io::drc(*p.quality.drc) : json(nullptr)},
                    {"sampling_rate_hz", json_io::number(p.quality.sampling_rate_hz)}};
    return {{"schema_version", kProfileSchemaVersion},
            {"id", p.id},
            {"timestamp_iso8601", p.timestamp},
            {"kind", to_string(p.kind)},
            {"identity", identity},
            {"parent_id", p.parent_id ? json(*p.parent_id) : json(nullptr)},
            {"signer_email", p.signer_email},
            {"response", json_io::response(p.response)},
            {"quality", quality}};
}

inline Profile profile_from_json(const nlohmann::json& j) {
    using json_io::field;
    Profile p;
    p.id = j.value("id", std::string{});
    p.timestamp = field(j, "timestamp_iso8601").get<std::string>();
    p.kind = parse_profile_kind(field(j, "kind").get<std::string>());
    const auto& id = field(j, "identity");
    p.identity.brand = field(id, "brand").get<std::string>();
    p.identity.model_name = field(id, "model_name").get<std::string>();
    p.identity.model_number = field(id, "model_number").get<std::string>();
    if (id.contains("screen_px") && !id.at("screen_px").is_null()) {
        const auto& s = id.at("screen_px");
        if (!s.is_array() || s.size() != 2) throw InvalidArgument("screen_px must be [width, height]");
        p.identity.screen_px = ScreenPx{s[0].get<int>(), s[1].get<int>()};
    }
    if (id.contains("os") && !id.at("os").is_null()) p.identity.os = id.at("os").get<std::string>();
    if (j.contains("parent_id") && !j.at("parent_id").is_null()) p.parent_id = j.at("parent_id").get<std::string>();
    p.signer_email = field(j, "signer_email").get<std::string>();
    p.response = json_io::to_response(field(j, "response"));
    if (j.contains("quality")) {
        const auto& q = j.at("quality");
        if (q.contains("flatness_sd_db") && !q.at("flatness_sd_db").is_null())
            p.quality.flatness_sd_db = json_io::to_number(q.at("flatness_sd_db"));
        if (q.contains("drc") && !q.at("drc").is_null()) p.quality.drc = json_io::to_drc(q.at("drc"));
        if (q.contains("sampling_rate_hz")) p.quality.sampling_rate_hz = json_io::to_number(q.at("sampling_rate_hz"));
    }
    return p;
}

/// Content id: FNV-1a 64 of the profile's JSON with the id field blank.
inline std::string content_id(const Profile& p) {
    Profile copy = p;
    copy.id.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(profile_to_json(copy).dump())));
    return buf;
}

/// Checks a profile on its own (no store lookups).
inline void validate_profile(const Profile& p) {
    parse_timestamp(p.timestamp);
    require(!normalize_key(p.identity.model_name).empty(), "profile: model_name must be non-empty");
    require(p.parent_id.has_value() == (p.kind != ProfileKind::manufacturer_microphone),
            "profile: a parent is required for all kinds except manufacturer_microphone, and forbidden for it");
    if (p.kind == ProfileKind::microphone)
        require(p.identity.screen_px.has_value(), "profile: phone microphones must carry screen_px");
    if (p.identity.screen_px)
        require(p.identity.screen_px->width > 0 && p.identity.screen_px->height > 0,
                "profile: screen_px must be positive");
    p.response.validate();
    require(p.response.size() >= 2, "profile: response needs at least two frequencies");
    require(p.response.freq_hz.front() == 0.0, "profile: response must start at 0 Hz");
    for (double g : p.response.gain_db) require(std::isfinite(g), "profile: response gains must be finite");
}

// ---------------------------------------------------------------------------
// Store

struct TraceChain {
    std::vector<Profile> profiles;  // leaf first, root last
};

struct MatchResult {
    std::optional<Profile> profile;
    // For a failed match: keys matched by the closest candidate.
    bool name_matched = false;
    bool number_matched = false;
    bool screen_matched = false;

    bool matched() const noexcept { return profile.has_value(); }
};

class ProfileStore {
public:
    /// Opens an existing store directory.
    static ProfileStore open(const std::filesystem::path& root) {
        if (!std::filesystem::is_directory(root)) throw Error("profile store not found: " + root.string());
        ProfileStore store(root);
        store.load();
        return store;
    }

    /// Opens the store, creating an empty one if the directory is absent.
    static ProfileStore open_or_create(const std::filesystem::path& root) {
        std::filesystem::create_directories(root / "profiles");
        return open(root);
    }

    const std::filesystem::path& root() const noexcept { return root_; }
    std::size_t size() const noexcept { return profiles_.size(); }

    /// All profiles, oldest first (ties by id).
    std::vector<Profile> list() const {
        std::vector<Profile> out;
        for (const auto& [id, p] : profiles_) out.push_back(p);
        std::stable_sort(out.begin(), out.end(), [](const Profile& a, const Profile& b) {
            return parse_timestamp(a.timestamp) < parse_timestamp(b.timestamp);
        });
        return out;
    }

    const Profile* find(const std::string& id) const {
        auto it = profiles_.find(id);
        return it == profiles_.end() ? nullptr : &it->second;
    }

    const Profile& get(const std::string& id) const {
        const Profile* p = find(id);
        if (!p) throw Error("profile not found: " + id);
        return *p;
    }

    /// Validates, assigns the content id, persists and returns the id. Adding
    /// an identical profile again returns the existing id.
    std::string add_profile(Profile p) {
        validate_profile(p);
        p.id = content_id(p);
        if (p.parent_id) {
            if (*p.parent_id == p.id) throw InvalidArgument("cycle: profile would be its own parent");
            const Profile* parent = find(*p.parent_id);
            if (!parent) throw InvalidArgument("parent profile not found: " + *p.parent_id);
            check_link(p, *parent);
            trace_chain(parent->id);
        }
        if (profiles_.count(p.id)) return p.id;

        WriteLock lock(root_ / ".lock");
        write_atomic(profile_path(p.id), profile_to_json(p).dump(2) + "\n");
        profiles_.emplace(p.id, p);
        write_index();
        return p.id;
    }

    /// Leaf-to-root chain from `id`, checked for dangling parents, cycles,
    /// kind alternation, timestamp order and a manufacturer root.
    TraceChain trace_chain(const std::string& id) const {
        TraceChain chain;
        std::set<std::string> seen;
        const Profile* cur = find(id);
        if (!cur) throw Error("profile not found: " + id);
        while (true) {
            if (!seen.insert(cur->id).second) throw Error("cycle: profile " + cur->id + " is its own ancestor");
            chain.profiles.push_back(*cur);
            if (!cur->parent_id) break;
            const Profile* parent = find(*cur->parent_id);
            if (!parent)
                throw Error("broken chain: parent " + *cur->parent_id + " of profile " + cur->id + " not found");
            if (seen.count(parent->id)) throw Error("cycle: profile " + parent->id + " is its own ancestor");
            check_link(*cur, *parent);
            cur = parent;
        }
        if (chain.profiles.back().kind != ProfileKind::manufacturer_microphone)
            throw Error("broken chain: root " + chain.profiles.back().id + " is not a manufacturer microphone");
        return chain;
    }

    /// Ids of profiles whose chain does not validate, with the reason.
    std::vector<std::pair<std::string, std::string>> validate_store() const {
        std::map<std::string, std::optional<std::string>> verdict;  // id -> error
        std::vector<std::pair<std::string, std::string>> bad;
        for (const auto& [id, p] : profiles_) {
            std::vector<std::string> path;
            const Profile* cur = &p;
            std::optional<std::string> err;
            std::set<std::string> seen;
            while (true) {
                if (auto v = verdict.find(cur->id); v != verdict.end()) {
                    err = v->second;
                    break;
                }
                if (!seen.insert(cur->id).second) {
                    err = "cycle at " + cur->id;
                    break;
                }
                path.push_back(cur->id);
                if (!cur->parent_id) {
                    if (cur->kind != ProfileKind::manufacturer_microphone) err = "root is not a manufacturer microphone";
                    break;
                }
                const Profile* parent = find(*cur->parent_id);
                if (!parent) {
                    err = "broken chain: parent " + *cur->parent_id + " not found";
                    break;
                }
                try {
                    check_link(*cur, *parent);
                } catch (const Error& e) {
                    err = e.what();
                    break;
                }
                cur = parent;
            }
            for (const auto& pid : path) verdict[pid] = err;
            if (err) bad.emplace_back(id, *err);
        }
        return bad;
    }

    /// Newest phone profile matching all three keys; otherwise the keys
    /// matched by the closest candidate.
    MatchResult match_phone(const std::string& model_name, const std::string& model_number,
                            const ScreenPx& screen) const {
        const std::string name = normalize_key(model_name);
        const std::string number = normalize_key(model_number);
        MatchResult best;
        int best_score = -1;
        std::int64_t best_time = 0;
        const Profile* hit = nullptr;
        std::int64_t hit_time = 0;
        for (const auto& [id, p] : profiles_) {
            if (p.kind != ProfileKind::microphone) continue;
            const bool n = normalize_key(p.identity.model_name) == name;
            const bool m = normalize_key(p.identity.model_number) == number;
            const bool s = p.identity.screen_px && same_screen(*p.identity.screen_px, screen);
            const std::int64_t t = parse_timestamp(p.timestamp);
            if (n && m && s) {
                if (!hit || t > hit_time || (t == hit_time && p.id > hit->id)) {
                    hit = &p;
                    hit_time = t;
                }
                continue;
            }
            const int score = int(n) + int(m) + int(s);
            if (score > best_score || (score == best_score && t > best_time)) {
                best_score = score;
                best_time = t;
                best.name_matched = n;
                best.number_matched = m;
                best.screen_matched = s;
            }
        }
        if (hit) return MatchResult{*hit, true, true, true};
        return best;
    }

    /// Profiles whose whole chain, apart from the manufacturer root, is signed
    /// by an approved email (case-insensitive). Broken chains are dropped.
    std::vector<Profile> filter_by_signers(const std::vector<Profile>& candidates,
                                           const std::set<std::string>& approved) const {
        std::set<std::string> ok;
        for (const auto& e : approved) ok.insert(normalize_key(e));
        std::vector<Profile> out;
        for (const auto& p : candidates) {
            try {
                const auto chain = trace_chain(p.id);
                const bool trusted = std::all_of(chain.profiles.begin(), chain.profiles.end(), [&](const Profile& q) {
                    return q.kind == ProfileKind::manufacturer_microphone || ok.count(normalize_key(q.signer_email));
                });
                if (trusted) out.push_back(p);
            } catch (const Error&) {
            }
        }
        return out;
    }

    /// Distinct phone models (normalized name and number) per brand.
    std::map<std::string, std::size_t> brand_coverage() const {
        std::map<std::string, std::string> display;  // normalized brand -> first spelling seen
        std::map<std::string, std::set<std::pair<std::string, std::string>>> models;
        for (const auto& p : list()) {
            if (p.kind != ProfileKind::microphone) continue;
            const std::string b = normalize_key(p.identity.brand);
            display.emplace(b, trim(p.identity.brand));
            models[b].emplace(normalize_key(p.identity.model_name), normalize_key(p.identity.model_number));
        }
        std::map<std::string, std::size_t> out;
        for (const auto& [b, set] : models) out[display[b]] = set.size();
        return out;
    }

private:
    explicit ProfileStore(std::filesystem::path root) : root_(std::move(root)) {}

    class WriteLock {
    public:
        explicit WriteLock(const std::filesystem::path& path) {
            fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
            if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) throw Error("cannot lock profile store: " + path.string());
        }
        ~WriteLock() {
            if (fd_ >= 0) {
                ::flock(fd_, LOCK_UN);
                ::close(fd_);
            }
        }
        WriteLock(const WriteLock&) = delete;
        WriteLock& operator=(const WriteLock&) = delete;

    private:
        int fd_ = -1;
    };

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
    }

    static void check_link(const Profile& child, const Profile& parent) {
        const bool alternates = child.kind == ProfileKind::loudspeaker ? is_microphone(parent.kind)
                                                                       : parent.kind == ProfileKind::loudspeaker;
        if (child.kind == ProfileKind::manufacturer_microphone || !alternates)
            throw InvalidArgument("kind alternation violated: " + to_string(child.kind) + " " + child.id +
                                  " cannot have " + to_string(parent.kind) + " parent " + parent.id);
        if (!(parse_timestamp(parent.timestamp) < parse_timestamp(child.timestamp)))
            throw InvalidArgument("timestamp order violated: parent " + parent.id + " (" + parent.timestamp +
                                  ") is not earlier than " + child.id + " (" + child.timestamp + ")");
    }

    std::filesystem::path profile_path(const std::string& id) const { return root_ / "profiles" / (id + ".json"); }

    static std::string read_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot read " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static void write_atomic(const std::filesystem::path& path, const std::string& content) {
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write " + tmp);
            out << content;
            if (!out.flush()) throw Error("cannot write " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    void write_index() const {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& p : list())
            entries.push_back({{"id", p.id},
                               {"timestamp_iso8601", p.timestamp},
                               {"kind", to_string(p.kind)},
                               {"parent_id", p.parent_id ? nlohmann::json(*p.parent_id) : nlohmann::json(nullptr)},
                               {"brand", p.identity.brand},
                               {"model_name", p.identity.model_name},
                               {"model_number", p.identity.model_number}});
        const nlohmann::json index = {{"schema_version", kProfileSchemaVersion}, {"profiles", entries}};
        write_atomic(root_ / "index.json", index.dump(2) + "\n");
    }

    // Profiles are read from profiles/*.json; the index is a derived summary.
    void load() {
        const auto dir = root_ / "profiles";
        if (!std::filesystem::is_directory(dir)) return;
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Profile p;
            try {
                p = profile_from_json(nlohmann::json::parse(read_file(f)));
            } catch (const std::exception& e) {
                throw Error("corrupt profile file " + f.string() + ": " + e.what());
            }
            if (p.id.empty()) p.id = f.stem().string();
            profiles_.emplace(p.id, std::move(p));
        }
    }

    std::filesystem::path root_;
    std::map<std::string, Profile> profiles_;
};

}  // namespace soundcal
