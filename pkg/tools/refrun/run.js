#!/usr/bin/env node
// Reference execution of a .wat module on the host engine (V8 via node),
// assembled with wabt. Reads a JSON job from argv:
//   {"wat": path, "entry": name, "runs": [{"args": [ints], "stub": [ints]}]}
// or a single run {"wat": path, "entry": name, "args": [...], "stub": [...]}.
// Prints {"results": [...]} for batched jobs, else a single result object;
// each result is {"result": [ints]} or {"trap": message}.
// Every run instantiates a fresh instance so mutable globals reset.
"use strict";
const fs = require("fs");

async function runOne(bin, entry, args, stub) {
  let stubCalls = 0;
  const values = stub && stub.length ? stub : [0];
  const imports = {
    env: new Proxy({}, {
      get: () => () => {
        const v = values[stubCalls % values.length] | 0;
        stubCalls += 1;
        return v;
      },
    }),
  };
  try {
    const { instance } = await WebAssembly.instantiate(bin, imports);
    const out = instance.exports[entry](...args);
    return { result: out === undefined ? [] : [out | 0] };
  } catch (e) {
    return { trap: String(e.message || e) };
  }
}

async function main() {
  const job = JSON.parse(process.argv[2]);
  const wabt = await require("wabt")();
  const source = fs.readFileSync(job.wat, "utf8");
  const bin = wabt.parseWat(job.wat, source).toBinary({}).buffer;
  if (job.runs) {
    const results = [];
    for (const r of job.runs) {
      results.push(await runOne(bin, job.entry, r.args, r.stub));
    }
    process.stdout.write(JSON.stringify({ results }));
  } else {
    process.stdout.write(JSON.stringify(await runOne(bin, job.entry, job.args, job.stub)));
  }
}

main().catch((e) => {
  process.stderr.write(String(e) + "\n");
  process.exit(1);
});
