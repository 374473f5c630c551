#include "eltex/mock_provider.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "eltex/dataset_io.hpp"
#include "eltex/rng.hpp"

namespace eltex {

namespace {

constexpr std::array kSubjects = {
    "Users",          "Traders",        "Validators",       "Our ops team",   "Several holders",
    "Bridge relayers", "Node operators", "Liquidity providers", "Support staff", "Community mods",
    "Whale watchers", "Auditors",       "Market makers",    "Early adopters", "Core devs",
    "Miners",         "Stakers",        "Analysts",         "NFT collectors", "Wallet users"};
constexpr std::array kActions = {
    "are reporting stuck withdrawals on",   "just noticed odd approvals from",
    "keep seeing failed transactions on",   "flagged a suspicious contract upgrade at",
    "cannot log into",                      "got a fake airdrop link claiming to be",
    "see the oracle price drifting on",     "lost access to hot wallets at",
    "spotted a drained liquidity pool on",  "received phishing DMs impersonating",
    "are worried about the downtime at",    "watched dormant addresses wake up near",
    "are discussing the new listing on",    "celebrated the mainnet launch of",
    "shared a tutorial about staking on",   "are comparing gas fees across",
    "posted a long thread about",           "opened a governance vote on",
    "noticed confirmation delays on",       "traced unusual token mints from"};
constexpr std::array kObjects = {
    "NovaSwap",   "Helix Bridge", "ArcLend",   "Quartz Exchange", "Bluefin DEX", "Orbit Wallet",
    "ZenChain",   "PolyVault",    "Kite Oracle", "Lumen Pay",     "Atlas DAO",   "Cobalt Finance",
    "Pyxis L2",   "Ember Staking", "Tidal Pools", "Vega Custody",  "Sable Labs",  "Nimbus Markets",
    "Ridge Protocol", "Fable NFT"};
constexpr std::array kTails = {
    "this morning.",           "for the last hour.",          "right after the upgrade.",
    "and nobody is answering.", "again, third time this week.", "before the token unlock.",
    "during the weekend.",     "and support went silent.",    "since the maintenance window.",
    "while volume spiked 40x.", "after a weird tx batch.",     "at block height 19,204,331.",
    "in the middle of the AMA.", "and the chart looks wild.",  "following the bridge migration.",
    "as fees jumped.",         "without any announcement.",   "once again today.",
    "right before the snapshot.", "and it is getting worse."};
constexpr std::array kTags = {"#DeFi", "#crypto", "#web3", "#security", "#alert", "#ETH", "#BTC", "#NFT", "", ""};

constexpr std::array kIndicatorPhrases = {
    "unusual spikes in transaction volume",      "abnormal block confirmation times",
    "unexpected changes in mining difficulty",   "suspicious smart contract interactions",
    "sudden activation of dormant addresses",    "unauthorized outgoing transactions",
    "reports of compromised private keys",       "rapid unexplained price swings",
    "withdrawal freezes or delays",              "unannounced exchange downtime",
    "unverified or rogue nodes",                 "node synchronization delays",
    "signs of majority hash power concentration", "cross-chain bridge anomalies",
    "phishing links impersonating projects",     "leaked or abused API keys",
    "sharp negative shifts in community sentiment", "irregular governance proposals",
    "spikes in block explorer lookups",          "emergency contract pauses",
    "oracle price deviations",                   "large flash loan activity",
    "fake support accounts in replies",          "sudden liquidity pool drains"};

constexpr std::array kAttackWords = {"hack",    "exploit", "drain",   "phish",  "stolen", "breach",
                                     "compromis", "attack", "stuck",   "lost access", "suspicious", "fake"};

std::uint64_t request_seed(std::uint64_t seed, const ChatRequest& req, std::string_view model) {
    std::uint64_t t;
    std::memcpy(&t, &req.temperature, sizeof t);
    std::uint64_t h = fnv1a(req.user_prompt);
    h = fnv1a(model, h);
    if (req.system_prompt) h = fnv1a(*req.system_prompt, h);
    return mix64(seed ^ mix64(h ^ mix64(t)));
}

template <typename Arr>
const char* pick(Rng& rng, const Arr& arr) {
    return arr[rng.uniform_index(arr.size())];
}

std::string fresh_message(Rng& rng) {
    std::string s = pick(rng, kSubjects);
    s += ' ';
    s += pick(rng, kActions);
    s += ' ';
    s += pick(rng, kObjects);
    s += ' ';
    s += pick(rng, kTails);
    if (rng.uniform_real() < 0.5) {
        s += ' ';
        s += pick(rng, kSubjects);
        s += ' ';
        s += pick(rng, kActions);
        s += ' ';
        s += pick(rng, kObjects);
        s += '.';
    }
    std::string tag = pick(rng, kTags);
    if (!tag.empty()) s += " " + tag;
    s += " (" + std::to_string(rng.uniform_index(10'000)) + ")";
    return s;
}

std::string near_copy(Rng& rng, const std::string& original) {
    std::vector<std::string> words;
    std::istringstream in(original);
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty()) return original + " !";
    words[rng.uniform_index(words.size())] = pick(rng, kObjects);
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out == original ? out + " again" : out;
}

std::size_t jittered(Rng& rng, std::size_t expected, std::size_t jitter) {
    if (jitter == 0) return expected;
    auto delta = static_cast<std::int64_t>(rng.uniform_index(2 * jitter + 1)) - static_cast<std::int64_t>(jitter);
    return static_cast<std::size_t>(std::max<std::int64_t>(0, static_cast<std::int64_t>(expected) + delta));
}

double content_score(Rng& rng, const std::string& content) {
    std::string lower = content;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    bool attack = std::any_of(kAttackWords.begin(), kAttackWords.end(),
                              [&](const char* w) { return lower.find(w) != std::string::npos; });
    double u = rng.uniform_real();
    double score = attack ? 0.7 + 0.3 * u : 0.3 * u;
    return std::round(score * 100.0) / 100.0;
}

}  // namespace

MockRule MockRule::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("mock rule must be a JSON object");
    MockRule r;
    if (j.contains("match")) {
        const auto& m = j["match"];
        if (m.is_string()) {
            r.match = m.get<std::string>();
        } else if (m.is_number_unsigned() || m.is_number_integer()) {
            r.match = m.get<std::size_t>();
        } else if (!m.is_null()) {
            throw ValidationError("mock rule 'match' must be a string or an integer");
        }
    }
    if (j.contains("model") && j["model"].is_string()) r.model = j["model"].get<std::string>();
    r.response = j.value("response", "");
    if (j.contains("usage")) {
        TokenUsage u;
        u.input_tokens = j["usage"].value("input", std::int64_t{0});
        u.output_tokens = j["usage"].value("output", std::int64_t{0});
        r.usage = u;
    }
    if (j.contains("finish_reason")) r.finish_reason = parse_finish_reason(j["finish_reason"].get<std::string>());
    if (j.contains("error")) {
        auto e = j["error"].get<std::string>();
        if (e == "rate_limit" || e == "rate_limited" || e == "429") {
            r.error = ProviderErrorKind::rate_limited;
        } else if (e == "transient") {
            r.error = ProviderErrorKind::transient;
        } else if (e == "auth") {
            r.error = ProviderErrorKind::auth;
        } else if (e == "invalid_request") {
            r.error = ProviderErrorKind::invalid_request;
        } else if (e == "permanent") {
            r.error = ProviderErrorKind::permanent;
        } else {
            throw ValidationError("unknown mock error kind '" + e + "'");
        }
    }
    if (j.contains("times")) r.times = j["times"].get<std::size_t>();
    r.behavior = j.value("behavior", "");
    return r;
}

MockProvider::MockProvider(std::vector<MockRule> rules, MockOptions options)
    : rules_(std::move(rules)), options_(std::move(options)) {
    for (const auto& r : rules_) remaining_.push_back(r.times);
}

std::vector<MockRule> MockProvider::parse_script(std::string_view jsonl) {
    std::vector<MockRule> rules;
    std::istringstream in{std::string(jsonl)};
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rules.push_back(MockRule::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw ValidationError("mock script line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rules;
}

std::shared_ptr<MockProvider> MockProvider::from_script_file(const std::filesystem::path& path, MockOptions options) {
    return std::make_shared<MockProvider>(parse_script(read_file(path)), std::move(options));
}

void MockProvider::set_call_hook(std::function<void(const ChatRequest&, std::size_t)> hook) {
    std::lock_guard lock(mu_);
    hook_ = std::move(hook);
}

std::size_t MockProvider::call_count() const {
    std::lock_guard lock(mu_);
    return calls_.size();
}

std::vector<ChatRequest> MockProvider::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

ProviderReply MockProvider::complete(const ChatRequest& request, std::string_view model) {
    std::size_t call_index;
    std::function<void(const ChatRequest&, std::size_t)> hook;
    std::optional<MockRule> chosen;
    {
        std::lock_guard lock(mu_);
        call_index = calls_.size();
        calls_.push_back(request);
        hook = hook_;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            const auto& r = rules_[i];
            if (remaining_[i] && *remaining_[i] == 0) continue;
            if (r.model && *r.model != model) continue;
            bool hit = std::visit(
                [&](const auto& m) {
                    using T = std::decay_t<decltype(m)>;
                    if constexpr (std::is_same_v<T, std::monostate>) {
                        return true;
                    } else if constexpr (std::is_same_v<T, std::string>) {
                        return request.user_prompt.find(m) != std::string::npos ||
                               (request.system_prompt && request.system_prompt->find(m) != std::string::npos);
                    } else {
                        return m == call_index;
                    }
                },
                r.match);
            if (!hit) continue;
            if (remaining_[i]) --*remaining_[i];
            chosen = r;
            break;
        }
    }
    if (hook) hook(request, call_index);
    if (options_.latency.count() > 0) std::this_thread::sleep_for(options_.latency);

    if (chosen) {
        if (chosen->error) {
            throw ProviderError(*chosen->error, "mock scripted " + std::string(to_string(*chosen->error)) + " error");
        }
        ProviderReply reply;
        if (!chosen->behavior.empty()) {
            reply = generate(chosen->behavior, request, model);
        } else {
            reply.text = chosen->response;
        }
        reply.finish_reason = chosen->finish_reason;
        if (chosen->usage) reply.usage = chosen->usage;
        return reply;
    }

    std::string behavior = "list";
    if (request.response_schema) {
        const auto& n = request.response_schema->name;
        if (n == schemas::kGeneratedMessages) behavior = "synthesize";
        else if (n == schemas::kAnnotationScores) behavior = "annotate";
        else if (n == schemas::kScoreMap) behavior = "scores";
    }
    return generate(behavior, request, model);
}

ProviderReply MockProvider::generate(const std::string& behavior, const ChatRequest& request,
                                     std::string_view model) const {
    Rng rng(request_seed(options_.seed, request, model));
    ProviderReply reply;
    reply.usage = options_.default_usage;

    if (behavior == "echo") {
        reply.text = request.user_prompt;
    } else if (behavior == "list") {
        std::vector<std::size_t> order(kIndicatorPhrases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t i = 0; i < 8; ++i) {
            reply.text += "- ";
            reply.text += kIndicatorPhrases[order[i]];
            reply.text += '\n';
        }
    } else if (behavior == "summarize_unique") {
        std::vector<std::string> items;
        std::unordered_set<std::string> seen;
        std::istringstream in(request.user_prompt);
        for (std::string line; std::getline(in, line);) {
            auto b = line.find_first_not_of(" \t");
            if (b == std::string::npos || line.compare(b, 2, "- ") != 0) continue;
            auto item = line.substr(b + 2);
            while (!item.empty() && (item.back() == '.' || item.back() == ' ' || item.back() == '\r')) item.pop_back();
            if (!item.empty() && seen.insert(item).second) items.push_back(item);
        }
        reply.text = "Key indicators include ";
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) reply.text += ", ";
            reply.text += items[i];
        }
        reply.text += ".";
    } else if (behavior == "synthesize") {
        std::size_t expected = 10;
        if (request.response_schema && request.response_schema->expected_items) {
            expected = *request.response_schema->expected_items;
        }
        std::size_t n = jittered(rng, expected, options_.count_jitter);
        // Lower temperatures repeat themselves more, as real models do.
        const double repeat = 0.3 * (1.0 - request.temperature);
        std::vector<std::string> out;
        for (std::size_t i = 0; i < n; ++i) {
            double u = rng.uniform_real();
            if (!out.empty() && u < repeat) {
                out.push_back(out[rng.uniform_index(out.size())]);
            } else if (!out.empty() && u < 2 * repeat) {
                out.push_back(near_copy(rng, out[rng.uniform_index(out.size())]));
            } else {
                out.push_back(fresh_message(rng));
            }
        }
        nlohmann::json arr = nlohmann::json::array();
        for (auto& s : out) arr.push_back({{"message", s}});
        reply.text = arr.dump();
    } else if (behavior == "annotate") {
        nlohmann::json arr = nlohmann::json::array();
        auto marker = request.user_prompt.rfind("Social Media Messages:");
        auto open = request.user_prompt.find('[', marker == std::string::npos ? 0 : marker);
        if (open != std::string::npos) {
            try {
                nlohmann::json input;
                std::istringstream in(request.user_prompt.substr(open));
                in >> input;
                for (const auto& obj : input) {
                    if (!obj.is_object() || !obj.contains("message_id")) continue;
                    std::string content = obj.value("message", "");
                    arr.push_back({{"message_id", obj["message_id"]}, {"cyberattack_score", content_score(rng, content)}});
                }
            } catch (const nlohmann::json::exception&) {
            }
        }
        reply.text = arr.dump();
    } else if (behavior == "scores") {
        std::size_t n = 10;
        if (request.response_schema && request.response_schema->expected_items) {
            n = *request.response_schema->expected_items;
        }
        nlohmann::json obj = nlohmann::json::object();
        for (std::size_t i = 1; i <= n; ++i) obj[std::to_string(i)] = std::round(rng.uniform_real() * 100.0) / 100.0;
        reply.text = obj.dump();
    } else {
        throw ValidationError("unknown mock behavior '" + behavior + "'");
    }
    return reply;
}

}  // namespace eltex
