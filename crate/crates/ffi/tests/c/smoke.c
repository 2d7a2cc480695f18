#include <math.h>
#include <stdio.h>
#include <string.h>

#include "arithdensity.h"

#define CHECK(cond)                                              \
  do {                                                           \
    if (!(cond)) {                                               \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,     \
              #cond, ad_last_error_message());                   \
      return 1;                                                  \
    }                                                            \
  } while (0)

int main(void) {
  AdForm *form = NULL;
  AdStore *store = NULL;
  double v = 0, re = 0, im = 0;
  uint64_t n = 0;
  char *text = NULL;

  CHECK(ad_form_parse("x1^2 + x2^2 + x3^2 + x4^2 + x5^2", &form) == AD_STATUS_OK);
  CHECK(ad_form_dim(form) == 5 && ad_form_degree(form) == 2);
  CHECK(ad_form_admissible(form) == 1);
  CHECK(ad_store_new(0, NULL, &store) == AD_STATUS_OK);

  /* 90 of the 243 vectors mod 3 have sum of squares 1 */
  CHECK(ad_local_factor(form, store, 1, 3, 1, &v) == AD_STATUS_OK);
  CHECK(fabs(v - 90.0 / 81.0) < 1e-12);

  /* Gauss sums: (i sqrt 3)^5 */
  CHECK(ad_exponential_sum(form, store, 1, 3, &re, &im) == AD_STATUS_OK);
  CHECK(fabs(re) < 1e-9 && fabs(im - 9.0 * sqrt(3.0)) < 1e-9);

  CHECK(ad_plan_modulus(10.0, NULL, &text) == AD_STATUS_OK);
  CHECK(strcmp(text, "2520") == 0);
  ad_string_free(text);

  CHECK(ad_eta(5, 1, &n) == AD_STATUS_OK && n == 4);
  CHECK(ad_shifted_main_term(5.0, 1, 0, &v) == AD_STATUS_PRECONDITION);
  CHECK(strlen(ad_last_error_message()) > 0);

  AdForm *bad = NULL;
  CHECK(ad_form_parse("x1^2 + x2^", &bad) == AD_STATUS_PARSE && bad == NULL);

  ad_store_free(store);
  ad_form_free(form);
  ad_form_free(NULL);
  puts("ok");
  return 0;
}
