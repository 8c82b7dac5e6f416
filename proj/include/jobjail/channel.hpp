/*
 * Copyright 2026 The jobjail Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace jobjail {

/// Unbounded multi-producer queue for handing values between tasks.
template <typename T>
class Channel
{
public:
    void send(T value)
    {
        {
            std::lock_guard lock(mu_);
            items_.push_back(std::move(value));
        }
        cv_.notify_one();
    }

    std::optional<T> try_receive()
    {
        std::lock_guard lock(mu_);
        if (items_.empty())
            return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    template <typename Rep, typename Period>
    std::optional<T> receive_for(std::chrono::duration<Rep, Period> timeout)
    {
        std::unique_lock lock(mu_);
        if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty(); }))
            return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> items_;
};

} // namespace jobjail
