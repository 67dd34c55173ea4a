#!/usr/bin/env python3
"""Regenerates corpus.json. Kept next to the data so edits stay reviewable."""

import json
import os

RECORDS = [
    {
        "id": "py-index-check",
        "language": "python",
        "question": "safe element access helper raises IndexError in python",
        "correct_code": (
            "def get_at(values, idx):\n"
            "    if idx >= len(values):\n"
            "        raise IndexError(\"out of range\")\n"
            "    return values[idx]\n"
        ),
        "explanation": "guards the index before reading the list",
        "vuln_class": "ArrayViolation",
        "cwe_ids": ["CWE-125"],
        "edit": {
            "original": "idx >= len(values)",
            "replacement": "idx > len(values)",
            "description": "off-by-one guard lets idx == len(values) through",
        },
        "anchor_line": 1,
    },
    {
        "id": "cpp-find-max",
        "language": "cpp",
        "question": "find maximum element of an int array in c++",
        "correct_code": (
            "int find_max(const int* v, int n) {\n"
            "  int best = v[0];\n"
            "  for (int i = 1; i < n; i++) {\n"
            "    if (v[i] > best) best = v[i];\n"
            "  }\n"
            "  return best;\n"
            "}\n"
        ),
        "explanation": "linear scan keeping the running maximum",
        "vuln_class": "ArrayViolation",
        "cwe_ids": ["CWE-125"],
        "edit": {
            "original": "i < n",
            "replacement": "i <= n",
            "description": "loop bound reads one element past the end",
        },
        "anchor_line": 2,
    },
    {
        "id": "java-sum-tail",
        "language": "java",
        "question": "sum the last k elements of an int array in java",
        "correct_code": (
            "static int sumTail(int[] a, int k) {\n"
            "    int s = 0;\n"
            "    for (int i = a.length - k; i < a.length; i++) {\n"
            "        s += a[i];\n"
            "    }\n"
            "    return s;\n"
            "}\n"
        ),
        "explanation": "starts k elements before the end and accumulates",
        "vuln_class": "ArrayViolation",
        "cwe_ids": ["CWE-125"],
        "edit": {
            "original": "int i = a.length - k",
            "replacement": "int i = a.length - k - 1",
            "description": "start index underflows the window by one",
        },
        "anchor_line": 2,
    },
    {
        "id": "cpp-copy-floats",
        "language": "cpp",
        "question": "copy a float buffer with memcpy in c++",
        "correct_code": (
            "void copy_floats(float* dst, const float* src, int count) {\n"
            "  memcpy(dst, src, count * sizeof(float));\n"
            "}\n"
        ),
        "explanation": "byte size is the element count times the element size",
        "vuln_class": "BufferOverflow",
        "cwe_ids": ["CWE-787"],
        "edit": {
            "original": "count * sizeof(float)",
            "replacement": "(count + 1) * sizeof(float)",
            "description": "copies one more float than the destination holds",
        },
        "anchor_line": 1,
    },
    {
        "id": "cpp-read-name",
        "language": "cpp",
        "question": "copy a c string into a fixed 64 byte buffer safely",
        "correct_code": (
            "void read_name(char out[64], const char* in) {\n"
            "  size_t len = strlen(in);\n"
            "  if (len >= 64) len = 63;\n"
            "  strncpy(out, in, len);\n"
            "  out[len] = '\\0';\n"
            "}\n"
        ),
        "explanation": "clamps the length so the terminator stays in bounds",
        "vuln_class": "BufferOverflow",
        "cwe_ids": ["CWE-120"],
        "edit": {
            "original": "if (len >= 64) len = 63;",
            "replacement": "if (len >= 64) len = 64;",
            "description": "clamp keeps the terminator one byte out of bounds",
        },
        "anchor_line": 2,
    },
    {
        "id": "cpp-dup-string",
        "language": "cpp",
        "question": "duplicate a c string on the heap",
        "correct_code": (
            "char* dup_string(const char* s) {\n"
            "  size_t n = strlen(s);\n"
            "  char* out = (char*)malloc(n + 1);\n"
            "  memcpy(out, s, n + 1);\n"
            "  return out;\n"
            "}\n"
        ),
        "explanation": "allocates space for the bytes plus the terminator",
        "vuln_class": "BufferOverflow",
        "cwe_ids": ["CWE-122"],
        "edit": {
            "original": "malloc(n + 1)",
            "replacement": "malloc(n)",
            "description": "allocation loses the terminator byte",
        },
        "anchor_line": 2,
    },
    {
        "id": "cpp-parse-flag",
        "language": "cpp",
        "question": "parse an optional integer argument with a default",
        "correct_code": (
            "int parse_flag(const char* arg) {\n"
            "  int value = 0;\n"
            "  if (arg != NULL) {\n"
            "    value = atoi(arg);\n"
            "  }\n"
            "  return value;\n"
            "}\n"
        ),
        "explanation": "defaults to zero when the argument is absent",
        "vuln_class": "IncorrectVariable",
        "cwe_ids": ["CWE-457"],
        "edit": {
            "original": "int value = 0;",
            "replacement": "int value;",
            "description": "value is read uninitialized when arg is null",
        },
        "anchor_line": 1,
    },
    {
        "id": "java-midpoint",
        "language": "java",
        "question": "compute the midpoint of two ints for binary search in java",
        "correct_code": (
            "static int midpoint(int low, int high) {\n"
            "    return low + (high - low) / 2;\n"
            "}\n"
        ),
        "explanation": "offset form avoids overflowing the sum",
        "vuln_class": "IncorrectVariable",
        "cwe_ids": ["CWE-190"],
        "edit": {
            "original": "low + (high - low) / 2",
            "replacement": "(low + high) / 2",
            "description": "sum can overflow for large bounds",
        },
        "anchor_line": 1,
    },
    {
        "id": "php-read-user-file",
        "language": "php",
        "question": "serve a file from a data directory by name in php",
        "correct_code": (
            "function read_user_file($name) {\n"
            "    if (strpos($name, \"..\") !== false) {\n"
            "        return null;\n"
            "    }\n"
            "    return file_get_contents(\"/srv/data/\" . $name);\n"
            "}\n"
        ),
        "explanation": "rejects any path containing a parent-directory step",
        "vuln_class": "InvalidValidation",
        "cwe_ids": ["CWE-20"],
        "edit": {
            "original": "!== false",
            "replacement": "=== 0",
            "description": "check only rejects a leading dot-dot, not embedded ones",
        },
        "anchor_line": 1,
    },
    {
        "id": "py-pop-task",
        "language": "python",
        "question": "pop the next task from a queue, returning None when empty",
        "correct_code": (
            "def pop_task(queue):\n"
            "    if len(queue) == 0:\n"
            "        return None\n"
            "    return queue.pop(0)\n"
        ),
        "explanation": "empty queues return None instead of raising",
        "vuln_class": "InvalidValidation",
        "cwe_ids": ["CWE-570"],
        "edit": {
            "original": "len(queue) == 0",
            "replacement": "queue is None",
            "description": "guard never fires for an empty list, pop raises",
        },
        "anchor_line": 1,
    },
    {
        "id": "py-drain-queue",
        "language": "python",
        "question": "drain a work queue and count the items in python",
        "correct_code": (
            "def drain(queue):\n"
            "    count = 0\n"
            "    while len(queue) > 0:\n"
            "        queue.pop()\n"
            "        count += 1\n"
            "    return count\n"
        ),
        "explanation": "pops until the queue is empty",
        "vuln_class": "InfiniteLoop",
        "cwe_ids": ["CWE-835"],
        "edit": {
            "original": "queue.pop()",
            "replacement": "queue[-1]",
            "description": "reads the tail instead of popping, loop never ends",
        },
        "anchor_line": 3,
    },
    {
        "id": "java-repeat",
        "language": "java",
        "question": "repeat a string n times with a StringBuilder in java",
        "correct_code": (
            "static String repeat(String s, int times) {\n"
            "    StringBuilder sb = new StringBuilder();\n"
            "    for (int i = 0; i < times; i++) {\n"
            "        sb.append(s);\n"
            "    }\n"
            "    return sb.toString();\n"
            "}\n"
        ),
        "explanation": "appends the string once per iteration",
        "vuln_class": "InfiniteLoop",
        "cwe_ids": ["CWE-835"],
        "edit": {
            "original": "i++",
            "replacement": "i--",
            "description": "counter runs away from the bound",
        },
        "anchor_line": 2,
    },
]


def main():
    out = os.path.join(os.path.dirname(__file__), "corpus.json")
    with open(out, "w") as f:
        json.dump({"records": RECORDS}, f, indent=2)
        f.write("\n")
    print(f"wrote {out} with {len(RECORDS)} records")


if __name__ == "__main__":
    main()
