/*
 * Copyright 2026 The edt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

namespace edt {

/// Keeps freed heap memory mapped between evaluations. Every forward pass allocates and frees
/// a few megabytes of activations; with the default glibc trim threshold the heap top is
/// returned to the kernel and faulted back in on each pass, which costs more than the math
/// on small models. No-op on other C libraries. Call once at program start.
void configure_allocator();

}  // namespace edt
