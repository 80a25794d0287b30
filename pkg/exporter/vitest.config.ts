import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // Network builds and wasm inference dominate; give each test room.
    testTimeout: 300_000,
    hookTimeout: 120_000,
  },
});
