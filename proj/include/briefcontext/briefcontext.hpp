#pragma once

#include "briefcontext/config.hpp"
#include "briefcontext/corpus.hpp"
#include "briefcontext/eval.hpp"
#include "briefcontext/llm.hpp"
#include "briefcontext/pipeline.hpp"
#include "briefcontext/preflight.hpp"
#include "briefcontext/prompt.hpp"
#include "briefcontext/ranking.hpp"
#include "briefcontext/scripted_backend.hpp"
#include "briefcontext/text.hpp"
#include "briefcontext/wire_backend.hpp"
