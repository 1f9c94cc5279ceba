#pragma once

#include "susx/adapter.hpp"
#include "susx/classifier.hpp"
#include "susx/curation.hpp"
#include "susx/embedding_store.hpp"
#include "susx/error.hpp"
#include "susx/eval_harness.hpp"
#include "susx/matrix.hpp"
#include "susx/report.hpp"
