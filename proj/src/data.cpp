#include "sidrec/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sidrec/bin_io.h"

namespace sidrec {

Tensor Catalog::emb_row(uint32_t item) const {
  Tensor t = Tensor::zeros({dim});
  std::copy_n(emb(item), dim, t.data.data());
  return t;
}

Corpus generate_synthetic(const SyntheticParams& p) {
  if (p.clusters == 0 || p.clusters > p.n_items)
    throw std::runtime_error("generate_synthetic: need 0 < clusters <= n_items");
  if (!(p.self_prob > 0.0 && p.self_prob <= 1.0))
    throw std::runtime_error("generate_synthetic: self_prob must be in (0, 1]");
  if (p.noise_sigma < 0.0) throw std::runtime_error("generate_synthetic: noise_sigma must be >= 0");
  if (p.seq_len < 2) throw std::runtime_error("generate_synthetic: seq_len must be >= 2");
  if (p.dim == 0) throw std::runtime_error("generate_synthetic: dim must be positive");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const int64_t d = p.dim;
  auto normalize = [&](double* v) {
    double n2 = 0.0;
    for (int64_t j = 0; j < d; ++j) n2 += v[j] * v[j];
    const double n = std::sqrt(n2);
    if (n < 1e-9) return false;
    for (int64_t j = 0; j < d; ++j) v[j] /= n;
    return true;
  };

  Tensor centers = Tensor::zeros({static_cast<int64_t>(p.clusters), d});
  for (uint32_t c = 0; c < p.clusters; ++c) {
    double* row = centers.data.data() + static_cast<int64_t>(c) * d;
    do {
      for (int64_t j = 0; j < d; ++j) row[j] = gauss(rng);
    } while (!normalize(row));
  }

  Corpus corpus;
  Catalog& cat = corpus.catalog;
  cat.dim = d;
  cat.embeddings = Tensor::zeros({static_cast<int64_t>(p.n_items), d});
  cat.external_ids.resize(p.n_items);
  cat.cluster_labels.resize(p.n_items);
  std::vector<std::vector<uint32_t>> cluster_items(p.clusters);
  for (uint32_t i = 0; i < p.n_items; ++i) {
    const uint32_t c = i % p.clusters;
    cat.external_ids[i] = i;
    cat.id_map[i] = i;
    cat.cluster_labels[i] = static_cast<int>(c);
    cluster_items[c].push_back(i);
    double* row = cat.embeddings.data.data() + static_cast<int64_t>(i) * d;
    bool ok = false;
    while (!ok) {
      for (int64_t j = 0; j < d; ++j) row[j] = centers.at(c, j) + p.noise_sigma * gauss(rng);
      ok = normalize(row);
    }
    // keep stored embeddings float32-representable so file round-trips are exact
    for (int64_t j = 0; j < d; ++j) row[j] = static_cast<double>(static_cast<float>(row[j]));
  }

  corpus.sequences.resize(p.n_users);
  for (uint32_t u = 0; u < p.n_users; ++u) {
    UserSequence& seq = corpus.sequences[u];
    seq.user_id = u;
    seq.events.reserve(p.seq_len);
    uint32_t state = static_cast<uint32_t>(uni(rng) * p.clusters) % p.clusters;
    for (uint32_t t = 0; t < p.seq_len; ++t) {
      const auto& items = cluster_items[state];
      seq.events.push_back(items[static_cast<size_t>(uni(rng) * items.size()) % items.size()]);
      if (uni(rng) >= p.self_prob) {
        // jump uniformly to one of the other clusters
        uint32_t next = static_cast<uint32_t>(uni(rng) * (p.clusters - 1)) % std::max(1u, p.clusters - 1);
        if (next >= state) next++;
        state = next % p.clusters;
      }
    }
  }
  return corpus;
}

// ---- file formats ------------------------------------------------------------

void save_embeddings(const std::string& path, const Catalog& catalog) {
  BinWriter w(path);
  w.magic("EMB0");
  w.u64(catalog.size());
  w.u32(static_cast<uint32_t>(catalog.dim));
  for (uint32_t i = 0; i < catalog.size(); ++i) {
    w.u64(catalog.external_ids[i]);
    for (int64_t j = 0; j < catalog.dim; ++j) w.f32(static_cast<float>(catalog.emb(i)[j]));
  }
  w.close();
}

Catalog load_embeddings(const std::string& path) {
  BinReader r(path);
  r.magic("EMB0");
  const uint64_t n = r.u64();
  const uint32_t d = r.u32();
  if (d == 0 || n == 0) r.fail("embeddings header");
  Catalog cat;
  cat.dim = d;
  cat.embeddings = Tensor::zeros({static_cast<int64_t>(n), static_cast<int64_t>(d)});
  cat.external_ids.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    const uint64_t ext = r.u64();
    if (!cat.id_map.emplace(ext, static_cast<uint32_t>(i)).second) r.fail("duplicate item id in record " + std::to_string(i));
    cat.external_ids[i] = ext;
    double* row = cat.embeddings.data.data() + static_cast<int64_t>(i) * d;
    bool nonzero = false;
    for (uint32_t j = 0; j < d; ++j) {
      row[j] = static_cast<double>(r.f32());
      if (!std::isfinite(row[j])) r.fail("non-finite embedding in record " + std::to_string(i));
      if (row[j] != 0.0) nonzero = true;
    }
    if (!nonzero) r.fail("zero embedding in record " + std::to_string(i));
  }
  return cat;
}

void save_sequences(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const UserSequence& seq : corpus.sequences) {
    out << seq.user_id << '\t';
    for (size_t i = 0; i < seq.events.size(); ++i) {
      if (i) out << ',';
      out << corpus.catalog.external_ids[seq.events[i]];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Corpus load_corpus(const std::string& embeddings_path, const std::string& sequences_path, uint32_t max_history,
                   LoadReport* report) {
  Corpus corpus;
  corpus.catalog = load_embeddings(embeddings_path);
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  std::ifstream in(sequences_path);
  if (!in) throw std::runtime_error("cannot open for reading: " + sequences_path);
  std::string line;
  uint64_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(sequences_path + ": malformed record at line " + std::to_string(line_no) +
                               " (missing tab)");
    UserSequence seq;
    try {
      seq.user_id = std::stoull(line.substr(0, tab));
    } catch (const std::exception&) {
      throw std::runtime_error(sequences_path + ": malformed user id at line " + std::to_string(line_no));
    }
    std::stringstream items(line.substr(tab + 1));
    std::string tok;
    while (std::getline(items, tok, ',')) {
      uint64_t ext;
      try {
        ext = std::stoull(tok);
      } catch (const std::exception&) {
        throw std::runtime_error(sequences_path + ": malformed item id at line " + std::to_string(line_no));
      }
      auto it = corpus.catalog.id_map.find(ext);
      if (it == corpus.catalog.id_map.end()) {
        rep.dropped_events++;
        continue;
      }
      seq.events.push_back(it->second);
    }
    if (seq.events.size() > max_history)
      seq.events.erase(seq.events.begin(), seq.events.end() - max_history);
    if (seq.events.size() < 2) {
      rep.dropped_sequences++;
      continue;
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

Split make_splits(const std::vector<UserSequence>& sequences) {
  Split split;
  for (uint32_t u = 0; u < sequences.size(); ++u) {
    const uint32_t n = static_cast<uint32_t>(sequences[u].events.size());
    if (n < 2) continue;
    if (n < 3) {
      split.train.push_back({u, n - 1});
      continue;
    }
    for (uint32_t pos = 1; pos + 2 < n; ++pos) split.train.push_back({u, pos});
    split.valid.push_back({u, n - 2});
    split.test.push_back({u, n - 1});
  }
  return split;
}

}  // namespace sidrec
