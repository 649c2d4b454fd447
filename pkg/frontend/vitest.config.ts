import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globalSetup: ["tests/globalSetup.ts"],
    // the suite shares one live service process; keep files sequential
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 300_000,
  },
});
