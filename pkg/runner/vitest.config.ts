import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // Worker tests spawn real python children; leave generous headroom.
    testTimeout: 20000,
  },
});
