#pragma once

// Builds the target RAG system an experiment attacks, in either generator
// mode.

#include <memory>
#include <span>

#include "../http_client.hpp"
#include "../ragsys.hpp"
#include "experiment.hpp"

namespace rpl::evalkit {

inline std::unique_ptr<TargetSystem> make_target(const RagConfig& rag, const CorpusSnapshot& corpus,
                                                 std::span<const QueryCase> queries) {
    auto oracle = SimulatedOracle::from_queries(queries);
    if (rag.generator_mode == GeneratorMode::simulated) {
        return std::make_unique<TargetSystem>(rag, corpus, Generator::make_simulated(std::move(oracle)));
    }
    std::shared_ptr<CompletionClient> client = HttpCompletionClient::from_config(rag.external);
    return std::make_unique<TargetSystem>(
        rag, corpus, Generator::make_external(ExternalGenerator(std::move(client), rag.external.max_retries), std::move(oracle)));
}

} // namespace rpl::evalkit
