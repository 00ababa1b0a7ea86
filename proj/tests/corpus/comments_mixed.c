/* leading comment mentioning flag */
int flag; // trailing flag
/* int hidden; */

void toggle(void)
{
  // flag = 0;
  flag = !flag; /* flag */
}
