#!/usr/bin/env node
// Compile fixture contracts to runtime bytecode with solcjs.
//
// usage: SOLC6=/path/to/solc@0.6.12 SOLC8=/path/to/solc@0.8.24 \
//        node tools/compile_fixtures.js tests/fixtures/sol tests/fixtures/hex
//
// Each source starts with a header comment:
//   // fixture: contract=Name solc=0.6|0.8 optimize=true|false
// Output per fixture: <stem>.hex (runtime bytecode) and <stem>.meta.json
// (compiler version, method identifiers, storage layout).
const fs = require("fs");
const path = require("path");

const [srcDir, outDir] = process.argv.slice(2);
const compilers = {
  "0.6": require(path.join(process.env.SOLC6, "node_modules", "solc")),
  "0.8": require(path.join(process.env.SOLC8, "node_modules", "solc")),
};

fs.mkdirSync(outDir, { recursive: true });
for (const file of fs.readdirSync(srcDir).sort()) {
  if (!file.endsWith(".sol")) continue;
  const source = fs.readFileSync(path.join(srcDir, file), "utf8");
  const header = source.match(/\/\/ fixture:(.*)/);
  if (!header) throw new Error(`${file}: missing fixture header`);
  const opts = Object.fromEntries(
    header[1].trim().split(/\s+/).map((kv) => kv.split("="))
  );
  const solc = compilers[opts.solc];
  const input = {
    language: "Solidity",
    sources: { [file]: { content: source } },
    settings: {
      optimizer: { enabled: opts.optimize === "true", runs: 200 },
      ...(opts.solc === "0.8" ? { evmVersion: "shanghai" } : {}),
      outputSelection: {
        "*": {
          "*": ["evm.deployedBytecode.object", "evm.methodIdentifiers", "storageLayout"],
        },
      },
    },
  };
  const out = JSON.parse(solc.compile(JSON.stringify(input)));
  const errors = (out.errors || []).filter((e) => e.severity === "error");
  if (errors.length) {
    throw new Error(`${file}:\n` + errors.map((e) => e.formattedMessage).join("\n"));
  }
  const c = out.contracts[file][opts.contract];
  const stem = file.replace(/\.sol$/, "");
  fs.writeFileSync(path.join(outDir, stem + ".hex"), c.evm.deployedBytecode.object + "\n");
  const meta = {
    contract: opts.contract,
    compiler: solc.version(),
    optimize: opts.optimize === "true",
    methodIdentifiers: c.evm.methodIdentifiers,
    storage: (c.storageLayout.storage || []).map((s) => ({
      label: s.label, slot: Number(s.slot), offset: s.offset, type: s.type,
    })),
  };
  fs.writeFileSync(path.join(outDir, stem + ".meta.json"), JSON.stringify(meta, null, 2) + "\n");
  console.log(`${stem}: ${c.evm.deployedBytecode.object.length / 2} bytes`);
}
