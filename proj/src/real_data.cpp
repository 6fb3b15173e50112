#include "ebp/real_data.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ebp/common.hpp"

namespace ebp::real {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw std::runtime_error(path + ": schema mismatch, expected header '" +
                                 expected_header + "', got '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    std::size_t ncols = split_csv_line(expected_header).size();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != ncols)
            throw std::runtime_error(path + ": schema mismatch on row '" + line + "'");
        rows.push_back(std::move(cells));
    }
    return rows;
}

long parse_long(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("bad " + what + " value: '" + s + "'");
    }
}

// days since civil epoch (proleptic Gregorian), for calendar midpoints
long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

struct Date {
    int year;
    long day;
};

Date parse_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
        throw std::runtime_error("bad date value: '" + s + "'");
    int y = static_cast<int>(parse_long(s.substr(0, 4), "date"));
    int m = static_cast<int>(parse_long(s.substr(5, 2), "date"));
    int d = static_cast<int>(parse_long(s.substr(8, 2), "date"));
    if (m < 1 || m > 12 || d < 1 || d > 31)
        throw std::runtime_error("bad date value: '" + s + "'");
    return {y, days_from_civil(y, m, d)};
}

}  // namespace

NhlPosition nhl_position_from(const std::string& s) {
    std::string t;
    for (char c : s) t += static_cast<char>(std::tolower(c));
    if (t == "all") return NhlPosition::All;
    if (t == "defender") return NhlPosition::Defender;
    if (t == "center") return NhlPosition::Center;
    if (t == "winger") return NhlPosition::Winger;
    throw std::invalid_argument("unknown NHL position filter: " + s);
}

namespace {
bool position_matches(const std::string& raw, NhlPosition filter) {
    if (filter == NhlPosition::All) return true;
    std::string t;
    for (char c : raw) t += static_cast<char>(std::tolower(c));
    switch (filter) {
        case NhlPosition::Defender: return t == "d" || t == "defender" || t == "defense";
        case NhlPosition::Center: return t == "c" || t == "center" || t == "centre";
        case NhlPosition::Winger:
            return t == "w" || t == "lw" || t == "rw" || t == "l" || t == "r" || t == "winger";
        default: return true;
    }
}
}  // namespace

std::vector<PredictionTask> load_nhl(const std::string& csv_path, NhlPosition filter) {
    auto rows = read_csv(csv_path, "season,player_id,position,goals");
    // season -> player -> goals (duplicate rows per player accumulate)
    std::map<long, std::map<std::string, long>> seasons;
    for (const auto& r : rows) {
        if (!position_matches(r[2], filter)) continue;
        long season = parse_long(r[0], "season");
        long goals = parse_long(r[3], "goals");
        if (goals < 0) throw std::runtime_error("negative goals for " + r[1]);
        seasons[season][r[1]] += goals;
    }
    if (seasons.empty()) throw std::runtime_error(csv_path + ": no rows after position filter");

    std::vector<PredictionTask> tasks;
    for (auto it = seasons.begin(); it != seasons.end(); ++it) {
        auto next = seasons.find(it->first + 1);
        if (next == seasons.end()) continue;
        PredictionTask t;
        t.n_y = 1.0;
        t.task_id = "nhl_" + std::to_string(it->first) + "_" + std::to_string(it->first + 1);
        for (const auto& [player, goals] : it->second) {
            auto jt = next->second.find(player);
            if (jt == next->second.end()) continue;
            t.xs.push_back(static_cast<int>(goals));
            t.ys.push_back(static_cast<int>(jt->second));
        }
        if (t.xs.empty())
            throw std::runtime_error(t.task_id + ": empty player intersection");
        tasks.push_back(std::move(t));
    }
    if (tasks.empty()) throw std::runtime_error(csv_path + ": no consecutive-season pairs");
    return tasks;
}

MlbTasks load_mlb(const std::string& csv_path) {
    auto rows = read_csv(csv_path, "date,player_id,role,count");
    struct Event {
        long day;
        std::string player;
        long count;
    };
    // (role, season) -> events
    std::map<std::pair<std::string, int>, std::vector<Event>> groups;
    for (const auto& r : rows) {
        Date d = parse_date(r[0]);
        std::string role = r[2];
        if (role == "batting") role = "bat";
        if (role == "pitching") role = "pitch";
        if (role != "bat" && role != "pitch")
            throw std::runtime_error(csv_path + ": unknown role '" + r[2] + "'");
        long count = parse_long(r[3], "count");
        if (count < 0) throw std::runtime_error("negative count for " + r[1]);
        groups[{role, d.year}].push_back({d.day, r[1], count});
    }
    if (groups.empty()) throw std::runtime_error(csv_path + ": no rows");

    MlbTasks out;
    for (const auto& [key, events] : groups) {
        long first = events.front().day, last = events.front().day;
        for (const auto& e : events) {
            first = std::min(first, e.day);
            last = std::max(last, e.day);
        }
        if (first == last)
            throw std::runtime_error("mlb_" + key.first + "_" + std::to_string(key.second) +
                                     ": single-day season has no midpoint");
        long mid = first + (last - first) / 2;
        std::map<std::string, std::pair<long, long>> per_player;  // (first half, second half)
        for (const auto& e : events) {
            auto& slot = per_player[e.player];
            if (e.day <= mid) slot.first += e.count;
            else slot.second += e.count;
        }
        PredictionTask t;
        t.n_y = 1.0;
        t.task_id = "mlb_" + key.first + "_" + std::to_string(key.second);
        for (const auto& [player, counts] : per_player) {
            t.xs.push_back(static_cast<int>(counts.first));
            t.ys.push_back(static_cast<int>(counts.second));
        }
        (key.first == "bat" ? out.batting : out.pitching).push_back(std::move(t));
    }
    return out;
}

const std::vector<std::string>& english_stopwords() {
    // scikit-learn's ENGLISH_STOP_WORDS (CountVectorizer stop_words="english")
    static const std::vector<std::string> words = {
        "a", "about", "above", "across", "after", "afterwards", "again", "against", "all",
        "almost", "alone", "along", "already", "also", "although", "always", "am", "among",
        "amongst", "amoungst", "amount", "an", "and", "another", "any", "anyhow", "anyone",
        "anything", "anyway", "anywhere", "are", "around", "as", "at", "back", "be", "became",
        "because", "become", "becomes", "becoming", "been", "before", "beforehand", "behind",
        "being", "below", "beside", "besides", "between", "beyond", "bill", "both", "bottom",
        "but", "by", "call", "can", "cannot", "cant", "co", "con", "could", "couldnt", "cry",
        "de", "describe", "detail", "do", "done", "down", "due", "during", "each", "eg",
        "eight", "either", "eleven", "else", "elsewhere", "empty", "enough", "etc", "even",
        "ever", "every", "everyone", "everything", "everywhere", "except", "few", "fifteen",
        "fifty", "fill", "find", "fire", "first", "five", "for", "former", "formerly", "forty",
        "found", "four", "from", "front", "full", "further", "get", "give", "go", "had", "has",
        "hasnt", "have", "he", "hence", "her", "here", "hereafter", "hereby", "herein",
        "hereupon", "hers", "herself", "him", "himself", "his", "how", "however", "hundred",
        "i", "ie", "if", "in", "inc", "indeed", "interest", "into", "is", "it", "its",
        "itself", "keep", "last", "latter", "latterly", "least", "less", "ltd", "made", "many",
        "may", "me", "meanwhile", "might", "mill", "mine", "more", "moreover", "most",
        "mostly", "move", "much", "must", "my", "myself", "name", "namely", "neither", "never",
        "nevertheless", "next", "nine", "no", "nobody", "none", "noone", "nor", "not",
        "nothing", "now", "nowhere", "of", "off", "often", "on", "once", "one", "only", "onto",
        "or", "other", "others", "otherwise", "our", "ours", "ourselves", "out", "over", "own",
        "part", "per", "perhaps", "please", "put", "rather", "re", "same", "see", "seem",
        "seemed", "seeming", "seems", "serious", "several", "she", "should", "show", "side",
        "since", "sincere", "six", "sixty", "so", "some", "somehow", "someone", "something",
        "sometime", "sometimes", "somewhere", "still", "such", "system", "take", "ten", "than",
        "that", "the", "their", "them", "themselves", "then", "thence", "there", "thereafter",
        "thereby", "therefore", "therein", "thereupon", "these", "they", "thick", "thin",
        "third", "this", "those", "though", "three", "through", "throughout", "thru", "thus",
        "to", "together", "too", "top", "toward", "towards", "twelve", "twenty", "two", "un",
        "under", "until", "up", "upon", "us", "very", "via", "was", "we", "well", "were",
        "what", "whatever", "when", "whence", "whenever", "where", "whereafter", "whereas",
        "whereby", "wherein", "whereupon", "wherever", "whether", "which", "while", "whither",
        "who", "whoever", "whole", "whom", "whose", "why", "will", "with", "within", "without",
        "would", "yet", "you", "your", "yours", "yourself", "yourselves"};
    return words;
}

namespace {

// lowercase alphabetic runs of length >= 2, stopwords dropped
std::vector<std::string> tokenize(const std::string& text,
                                  const std::unordered_set<std::string>& stop) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 2 && !stop.count(cur)) out.push_back(cur);
        cur.clear();
    };
    for (char c : text) {
        if (std::isalpha(static_cast<unsigned char>(c)))
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    return out;
}

// sentences split on runs of .!? followed by whitespace (or end of text)
std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (std::size_t i = 0; i < text.size(); ++i) {
        cur += text[i];
        if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
            std::size_t j = i;
            while (j + 1 < text.size() &&
                   (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?'))
                cur += text[++j];
            if (j + 1 >= text.size() || std::isspace(static_cast<unsigned char>(text[j + 1]))) {
                out.push_back(cur);
                cur.clear();
            }
            i = j;
        }
    }
    if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
    return out;
}

}  // namespace

WordFreqResult load_wordfreq(const std::string& text, std::size_t head_tokens,
                             const std::vector<std::string>* stopwords) {
    const auto& stopvec = stopwords ? *stopwords : english_stopwords();
    std::unordered_set<std::string> stop(stopvec.begin(), stopvec.end());

    std::vector<std::string> sentences = split_sentences(text);
    std::vector<std::vector<std::string>> tokens(sentences.size());
    std::size_t total = 0;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        tokens[s] = tokenize(sentences[s], stop);
        total += tokens[s].size();
    }
    if (total <= head_tokens) {
        return {std::nullopt, "text too short: " + std::to_string(total) +
                                  " tokens <= " + std::to_string(head_tokens)};
    }

    std::size_t head_sents = 0, seen = 0;
    while (head_sents < sentences.size() && seen < head_tokens)
        seen += tokens[head_sents++].size();
    if (head_sents >= sentences.size())
        return {std::nullopt, "no sentences left for the label section"};

    std::map<std::string, std::pair<int, int>> counts;  // word -> (head, tail)
    for (std::size_t s = 0; s < sentences.size(); ++s)
        for (const auto& w : tokens[s])
            (s < head_sents ? counts[w].first : counts[w].second)++;

    PredictionTask t;
    t.task_id = "wordfreq";
    t.n_y = static_cast<double>(sentences.size() - head_sents) /
            static_cast<double>(head_sents);
    for (const auto& [w, c] : counts) {
        t.xs.push_back(c.first);
        t.ys.push_back(c.second);
    }
    return {std::move(t), ""};
}

ScoreRow score_task(const PredictionTask& task, const Estimator& estimator,
                    const std::string& estimator_id) {
    if (task.xs.size() != task.ys.size() || task.xs.empty())
        throw std::invalid_argument("score_task: malformed task");
    if (task.n_y <= 0.0) throw std::invalid_argument("score_task: n_y <= 0");

    // estimates depend on xs only; ys enter after this point
    std::vector<double> est = estimator(task.xs);

    auto score = [&](const std::vector<double>& theta, double& rmse, double& mae) {
        double se = 0.0, ae = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double yhat = task.n_y * theta[i];
            double diff = yhat - static_cast<double>(task.ys[i]);
            se += diff * diff;
            ae += std::abs(diff);
        }
        rmse = std::sqrt(se / static_cast<double>(theta.size())) / task.n_y;
        mae = (ae / static_cast<double>(theta.size())) / task.n_y;
    };

    ScoreRow row;
    row.task_id = task.task_id;
    row.estimator_id = estimator_id;
    score(est, row.rmse_norm, row.mae_norm);

    double mle_rmse, mle_mae;
    score(mle(task.xs), mle_rmse, mle_mae);
    row.rmse_ratio_vs_mle = mle_rmse > 0.0 ? row.rmse_norm / mle_rmse : 1.0;
    row.mae_ratio_vs_mle = mle_mae > 0.0 ? row.mae_norm / mle_mae : 1.0;
    return row;
}

std::vector<ScoreRow> score_tasks(const std::vector<PredictionTask>& tasks,
                                  const std::vector<std::string>& estimator_ids,
                                  const EstimatorContext& ctx, int threads) {
    std::vector<Estimator> ests;
    for (const auto& id : estimator_ids) ests.push_back(make_estimator(id, ctx));
    std::vector<ScoreRow> rows(tasks.size() * estimator_ids.size());
    std::string err;
#pragma omp parallel for schedule(dynamic) num_threads(effective_threads(threads)) collapse(2)
    for (long t = 0; t < static_cast<long>(tasks.size()); ++t) {
        for (long e = 0; e < static_cast<long>(estimator_ids.size()); ++e) {
            try {
                rows[t * estimator_ids.size() + e] =
                    score_task(tasks[t], ests[e], estimator_ids[e]);
            } catch (const std::exception& ex) {
#pragma omp critical
                err = ex.what();
            }
        }
    }
    if (!err.empty()) throw std::runtime_error(err);
    return rows;
}

AggregateResult aggregate_scores(const std::vector<ScoreRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("aggregate_scores: no rows");
    std::set<std::string> est_set, task_set;
    for (const auto& r : rows) {
        est_set.insert(r.estimator_id);
        task_set.insert(r.task_id);
    }
    std::map<std::pair<std::string, std::string>, const ScoreRow*> cell;
    for (const auto& r : rows) cell[{r.estimator_id, r.task_id}] = &r;

    std::vector<std::string> missing;
    for (const auto& e : est_set)
        for (const auto& t : task_set)
            if (!cell.count({e, t})) missing.push_back(e + "/" + t);
    if (!missing.empty()) {
        std::string msg = "aggregate_scores: unbalanced panel, missing:";
        for (const auto& m : missing) msg += " " + m;
        throw std::invalid_argument(msg);
    }

    AggregateResult out;
    for (const auto& e : est_set) {
        std::vector<double> imp_rmse, imp_mae;
        for (const auto& t : task_set) {
            const ScoreRow* r = cell[{e, t}];
            imp_rmse.push_back(100.0 * (1.0 - r->rmse_ratio_vs_mle));
            imp_mae.push_back(100.0 * (1.0 - r->mae_ratio_vs_mle));
        }
        AggregateRow row;
        row.estimator_id = e;
        row.tasks = task_set.size();
        row.rmse_improvement = mean_of(imp_rmse);
        row.mae_improvement = mean_of(imp_mae);
        if (imp_rmse.size() > 1) {
            row.rmse_ci95 = 1.96 * std::sqrt(sample_variance(imp_rmse) / imp_rmse.size());
            row.mae_ci95 = 1.96 * std::sqrt(sample_variance(imp_mae) / imp_mae.size());
        }
        out.rows.push_back(row);
    }

    if (est_set.count("mle") && task_set.size() >= 2) {
        std::map<std::string, std::vector<double>> losses;
        for (const auto& e : est_set)
            for (const auto& t : task_set)
                losses[e].push_back(cell[{e, t}]->rmse_norm);
        for (const auto& e : est_set) {
            if (e == "mle") continue;
            harness::PairTest pt;
            pt.a = e;
            pt.b = "mle";
            pt.n = 0;
            try {
                pt.p_value = harness::paired_t_test(losses[e], losses["mle"]);
            } catch (const std::exception&) {
                pt.p_value = std::numeric_limits<double>::quiet_NaN();
            }
            out.ttests.push_back(pt);
        }
        if (est_set.size() >= 2) {
            std::vector<harness::RankingRecord> records;
            for (const auto& t : task_set) {
                std::vector<std::pair<double, std::string>> v;
                for (const auto& e : est_set) v.emplace_back(cell[{e, t}]->rmse_norm, e);
                std::stable_sort(v.begin(), v.end());
                harness::RankingRecord rec;
                for (auto& [loss, id] : v) rec.order.push_back(id);
                records.push_back(std::move(rec));
            }
            out.pl_rmse = harness::plackett_luce_fit(records, "mle");
        }
    }
    return out;
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "task_id,estimator_id,rmse_norm,mae_norm,rmse_ratio_vs_mle,mae_ratio_vs_mle\n";
    f.precision(12);
    for (const auto& r : rows)
        f << r.task_id << ',' << r.estimator_id << ',' << r.rmse_norm << ',' << r.mae_norm
          << ',' << r.rmse_ratio_vs_mle << ',' << r.mae_ratio_vs_mle << "\n";
}

void write_aggregate_csv(const AggregateResult& agg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "estimator_id,rmse_improvement,rmse_ci95,mae_improvement,mae_ci95,tasks\n";
    f.precision(12);
    for (const auto& r : agg.rows)
        f << r.estimator_id << ',' << r.rmse_improvement << ',' << r.rmse_ci95 << ','
          << r.mae_improvement << ',' << r.mae_ci95 << ',' << r.tasks << "\n";
}

}  // namespace ebp::real
